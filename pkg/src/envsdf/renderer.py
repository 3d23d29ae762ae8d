"""The decomposed neural renderer for the canonical sphere stage.

Per ray: stratified samples through the bounding sphere are fed to the
material-conditioned geometry net (SDF + roughness + feature per sample);
densities composite into weights; the environment nets are queried once
per ray at the expected surface point (normal direction with a fixed
smooth roughness for the diffuse path, reflected view direction with the
predicted roughness for the specular path); the shading decoders then
color every sample and the two color stacks composite separately before
the final sRGB mapping of their sum.

Training draws fresh supervised rays from the analytic oracle each step:
an L1 photometric term on tone-mapped colors (hit rays), an MSE term
against the exact sphere SDF at every sampled position, and an Eikonal
term on finite-difference gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .envmap import EnvironmentMap
from .geom import Camera, camera_rays, ray_sphere_intersect, reflect_t
from .models import (FEATURE_DIM, RHO_DIFFUSE, EnvFeatureNet, ShadingNets,
                     SphereGeometryNet, fd_gradient)
from .nn import AdamState, NanGradientError, adam_step, l2_normalize
from .oracle import sphere_sdf, synthesize_batch
from .tensor import Tensor
from .volume import DensityParams, composite, sample_ray, sdf_to_density

__all__ = [
    "SphereRendererModel",
    "build_renderer_model",
    "sphere_forward",
    "render_sphere_view",
    "swap_environment",
    "train_renderer",
    "cosine_lr",
]


@dataclass
class SphereRendererModel:
    env_nets: dict[str, EnvFeatureNet]
    shading: ShadingNets
    geometry: SphereGeometryNet
    density: DensityParams
    norm_mode: str = "l2"
    bound_radius: float = 1.3
    fd_eps: float = 1e-3
    rho_diffuse: float = RHO_DIFFUSE

    def probe_names(self) -> list[str]:
        return sorted(self.env_nets)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name in self.probe_names():
            out.extend(self.env_nets[name].named_parameters(f"env.{name}"))
        out.extend(self.shading.named_parameters())
        out.extend(self.geometry.named_parameters("sphere_geo"))
        out.extend(self.density.named_parameters("density"))
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def save(self, path: str, meta: dict | None = None) -> None:
        tensors = {name: p.data for name, p in self.named_parameters()}
        full_meta = {
            "kind": "renderer",
            "norm_mode": self.norm_mode,
            "bound_radius": self.bound_radius,
            "fd_eps": self.fd_eps,
            "rho_diffuse": self.rho_diffuse,
            "probes": self.probe_names(),
            "env_widths": [w for w in self.env_nets[self.probe_names()[0]].mlp.widths[1:-1]],
            "geo_widths": [w for w in self.geometry.mlp.widths[1:-1]],
            "geo_octaves": self.geometry.octaves,
        }
        full_meta.update(meta or {})
        save_checkpoint(path, tensors, full_meta)

    @classmethod
    def load(cls, path: str) -> "SphereRendererModel":
        tensors, meta = load_checkpoint(path)
        rng = np.random.default_rng(0)  # shapes only; data overwritten below
        model = build_renderer_model(
            probe_names=meta["probes"], rng=rng, norm_mode=meta["norm_mode"],
            env_widths=tuple(meta["env_widths"]), geo_widths=tuple(meta["geo_widths"]),
            geo_octaves=meta["geo_octaves"], bound_radius=meta["bound_radius"],
            fd_eps=meta["fd_eps"], rho_diffuse=meta["rho_diffuse"])
        for name, p in model.named_parameters():
            p.data = tensors[name].astype(p.data.dtype)
        return model


def build_renderer_model(probe_names: list[str], rng: np.random.Generator,
                         norm_mode: str = "l2",
                         env_widths: tuple[int, ...] = (256, 256, 256, 256),
                         geo_widths: tuple[int, ...] = (64, 64, 64),
                         geo_octaves: int = 6, bound_radius: float = 1.3,
                         fd_eps: float = 1e-3, beta_init: float = 0.1,
                         rho_diffuse: float = RHO_DIFFUSE) -> SphereRendererModel:
    env_nets = {name: EnvFeatureNet(rng, widths=env_widths, norm_mode=norm_mode)
                for name in sorted(probe_names)}
    return SphereRendererModel(
        env_nets=env_nets,
        shading=ShadingNets(rng),
        geometry=SphereGeometryNet(rng, octaves=geo_octaves, widths=geo_widths,
                                   norm_mode=norm_mode),
        density=DensityParams.create(beta_init=beta_init),
        norm_mode=norm_mode, bound_radius=bound_radius, fd_eps=fd_eps,
        rho_diffuse=rho_diffuse)


def _env_features_grouped(model: SphereRendererModel, probe_ids: np.ndarray,
                          id_to_name: list[str], dirs: Tensor, rho: Tensor) -> Tensor:
    """Query each probe's environment net on its own ray group and merge."""
    n = dirs.shape[0]
    out = None
    for pid, name in enumerate(id_to_name):
        sel = np.nonzero(probe_ids == pid)[0]
        if sel.size == 0:
            continue
        f = model.env_nets[name](T.gather_rows(dirs, sel), T.gather_rows(rho, sel))
        placed = T.scatter_rows(f, sel, n)
        out = placed if out is None else out + placed
    assert out is not None, "empty batch"
    return out


def sphere_forward(model: SphereRendererModel, origins: np.ndarray, dirs: np.ndarray,
                   materials: np.ndarray, probe_ids: np.ndarray,
                   id_to_name: list[str], n_samples: int,
                   rng: np.random.Generator | None = None,
                   eik_subset: int = 0,
                   eik_rng: np.random.Generator | None = None,
                   shade_floor: float = 0.0,
                   detach_normals: bool = False) -> dict:
    """Differentiable render of rays that intersect the bounding sphere.

    Caller must pre-filter rays to those hitting the bound. Returns tensors
    for the loss (colors, per-sample SDF, eikonal gradients) plus detached
    aux arrays (weights, expected points, normals).
    """
    r = origins.shape[0]
    _, t0, t1 = ray_sphere_intersect(origins, dirs, np.zeros(3), model.bound_radius)
    rs = sample_ray(origins, dirs, np.maximum(t0, 1e-4), t1, n_samples, rng=rng)
    flat_pos = rs.positions.reshape(-1, 3)
    flat_mat = np.repeat(materials, n_samples, axis=0)

    geo = model.geometry.query(flat_pos, flat_mat)
    sdf_grid = T.reshape(geo.sdf, (r, n_samples))
    sigma = sdf_to_density(sdf_grid, model.density)
    comp = composite(sigma, rs.deltas, t=rs.t, positions=rs.positions)
    weights = comp.weights

    # Ray-level shading quantities at the (detached) expected surface point.
    x_bar = comp.point.data
    mat_6 = np.tile(materials, (6, 1))
    grad = fd_gradient(
        lambda p: model.geometry.query(p, mat_6, heads=False), x_bar, model.fd_eps)
    normal = l2_normalize(grad)
    if detach_normals:
        # Exact SDF supervision already shapes this stage's geometry; routing
        # photometric error through the normals only injects decoder noise
        # into a field we know analytically.
        normal = normal.detach()
    omega_o = Tensor(-dirs.astype(grad.data.dtype))
    cos_theta = T.tsum(normal * omega_o, axis=-1, keepdims=True)
    refl = reflect_t(omega_o, normal)

    rho_samples = T.reshape(geo.rho, (r, n_samples))
    acc_safe = T.maximum(comp.opacity, 1e-6)
    rho_bar = T.reshape(T.tsum(weights * rho_samples, axis=1) / acc_safe, (r, 1))

    # One grouped env query serves both shading paths: rows [0, r) carry the
    # normal-direction/smooth-roughness (diffuse) queries, rows [r, 2r) the
    # reflected-direction/predicted-roughness (specular) ones.
    rho_d = Tensor(np.full((r, 1), model.rho_diffuse, dtype=grad.data.dtype))
    dirs2 = T.concat([normal, refl], axis=0)
    rho2 = T.concat([rho_d, rho_bar], axis=0)
    f_env_2 = _env_features_grouped(model, np.tile(probe_ids, 2), id_to_name,
                                    dirs2, rho2)
    f_env_d = f_env_2[:r]
    f_env_s = f_env_2[r:]

    ray_of_sample = np.repeat(np.arange(r), n_samples)
    n_rows = r * n_samples
    if shade_floor > 0.0:
        # Shade only samples whose compositing weight can matter; dropped
        # rows contribute weight * 0 color (error bounded by floor * S).
        keep_idx = np.flatnonzero(weights.data.reshape(-1) > shade_floor)
    else:
        keep_idx = None

    if keep_idx is None:
        feat_rows, ray_rows = geo.feat, ray_of_sample
    else:
        feat_rows = T.gather_rows(geo.feat, keep_idx)
        ray_rows = ray_of_sample[keep_idx]
    c_d = model.shading.diffuse_color(feat_rows, T.gather_rows(f_env_d, ray_rows))
    c_s = model.shading.specular_color(feat_rows, T.gather_rows(f_env_s, ray_rows),
                                       T.gather_rows(cos_theta, ray_rows))
    if keep_idx is not None:
        c_d = T.scatter_rows(c_d, keep_idx, n_rows)
        c_s = T.scatter_rows(c_s, keep_idx, n_rows)

    w3 = T.reshape(weights, (r, n_samples, 1))
    rgb_d = T.tsum(w3 * T.reshape(c_d, (r, n_samples, 3)), axis=1)
    rgb_s = T.tsum(w3 * T.reshape(c_s, (r, n_samples, 3)), axis=1)
    rgb_lin = rgb_d + rgb_s
    rgb_srgb = T.srgb_encode_op(rgb_lin)

    out = {
        "rgb_srgb": rgb_srgb, "rgb_lin": rgb_lin, "rgb_d": rgb_d, "rgb_s": rgb_s,
        "sdf": geo.sdf, "positions": flat_pos, "weights": weights,
        "opacity": comp.opacity, "depth": comp.depth, "point": x_bar,
        "normal": normal, "grad": grad, "rho_bar": rho_bar, "samples": rs,
    }

    if eik_subset > 0:
        pick_rng = eik_rng or np.random.default_rng(0)
        pick = pick_rng.choice(flat_pos.shape[0], size=min(eik_subset, flat_pos.shape[0]),
                               replace=False)
        mat_pick = np.tile(flat_mat[pick], (6, 1))
        g_sub = fd_gradient(
            lambda p: model.geometry.query(p, mat_pick, heads=False),
            flat_pos[pick], model.fd_eps)
        out["eik_grads"] = T.concat([grad, g_sub], axis=0) if r else g_sub
    else:
        out["eik_grads"] = grad
    return out


def render_sphere_view(model: SphereRendererModel, cam: Camera, material,
                       probe_name: str, n_samples: int = 32,
                       background: EnvironmentMap | None = None,
                       chunk: int = 4096) -> dict:
    """Deterministic full-image render (no jitter, no tape).

    Returns float arrays: srgb (H,W,3), linear (H,W,3), diffuse/specular
    layers, opacity, normals, depth.
    """
    mat_row = material.as_array() if hasattr(material, "as_array") else np.asarray(material)
    origins, dirs = camera_rays(cam)
    n_px = origins.shape[0]
    hit_b, _, _ = ray_sphere_intersect(origins, dirs, np.zeros(3), model.bound_radius)

    lin = np.zeros((n_px, 3))
    lin_d = np.zeros((n_px, 3))
    lin_s = np.zeros((n_px, 3))
    opacity = np.zeros(n_px)
    normals = np.zeros((n_px, 3))
    depth = np.full(n_px, np.inf)

    sel_all = np.nonzero(hit_b)[0]
    id_to_name = [probe_name]
    for lo in range(0, sel_all.size, chunk):
        sel = sel_all[lo:lo + chunk]
        mats = np.broadcast_to(mat_row, (sel.size, 5)).copy()
        fw = sphere_forward(model, origins[sel], dirs[sel], mats,
                            np.zeros(sel.size, dtype=np.int64), id_to_name,
                            n_samples, rng=None)
        lin[sel] = fw["rgb_lin"].data
        lin_d[sel] = fw["rgb_d"].data
        lin_s[sel] = fw["rgb_s"].data
        opacity[sel] = fw["opacity"].data
        normals[sel] = fw["normal"].data
        depth[sel] = fw["depth"].data

    if background is not None:
        bg = background.sample(dirs)
        lin = lin + (1.0 - opacity[:, None]) * bg
    h, w = cam.height, cam.width
    from .color import srgb_encode

    return {
        "srgb": srgb_encode(np.maximum(lin, 0.0)).reshape(h, w, 3),
        "linear": lin.reshape(h, w, 3),
        "diffuse": lin_d.reshape(h, w, 3),
        "specular": lin_s.reshape(h, w, 3),
        "opacity": opacity.reshape(h, w),
        "normals": normals.reshape(h, w, 3),
        "depth": depth.reshape(h, w),
    }


def swap_environment(model: SphereRendererModel, probe_name: str,
                     env_net: EnvFeatureNet) -> EnvFeatureNet:
    """Replace one probe's environment net; returns the previous net.

    The incoming net must produce the same feature width the decoders
    expect; geometry and shading stay untouched.
    """
    if env_net.mlp.widths[-1] != FEATURE_DIM:
        raise ValueError(
            f"environment net feature width {env_net.mlp.widths[-1]} != {FEATURE_DIM}")
    if probe_name not in model.env_nets:
        raise ValueError(f"unknown probe {probe_name!r}; have {model.probe_names()}")
    old = model.env_nets[probe_name]
    model.env_nets[probe_name] = env_net
    return old


def cosine_lr(step: int, total: int, lr: float, final_frac: float = 0.1) -> float:
    t = min(max(step / max(total - 1, 1), 0.0), 1.0)
    return lr * (final_frac + (1.0 - final_frac) * 0.5 * (1.0 + np.cos(np.pi * t)))


def evaluate_renderer(model: SphereRendererModel, probes: dict[str, EnvironmentMap],
                      seed: int, n_views: int = 6, image_size: int = 64,
                      spp: int = 256, n_samples: int = 32) -> dict:
    """Held-out comparison against the oracle on fresh (view, material, probe)
    draws. Photometric stats are masked to the oracle's hit pixels (the model
    does not represent the background); normals compare at hit pixels.
    """
    from .brdf import Material
    from .color import srgb_encode
    from .geom import normalize as _norm
    from .metrics import metric_mae, metric_psnr
    from .oracle import render_sphere_image, sphere_camera

    rng = np.random.default_rng(seed)
    names = model.probe_names()
    l1s, psnrs, maes = [], [], []
    for k in range(n_views):
        view = _norm(rng.normal(size=3))
        mat = Material(float(rng.uniform(0.05, 1.0)), float(rng.uniform()),
                       tuple(rng.uniform(0.1, 1.0, size=3)))
        name = names[int(rng.integers(len(names)))]
        cam = sphere_camera(view, width=image_size, height=image_size)
        ref = render_sphere_image(cam, mat, probes[name], spp=spp,
                                  seed=int(rng.integers(2**31)), background="black")
        out = render_sphere_view(model, cam, mat, name, n_samples=n_samples)
        mask = ref.mask
        ref_srgb = srgb_encode(ref.rgb)
        l1s.append(float(np.mean(np.abs(out["srgb"][mask] - ref_srgb[mask]))))
        psnrs.append(metric_psnr(out["srgb"], ref_srgb, mask=mask))
        maes.append(metric_mae(out["normals"], ref.normals, mask))
    return {"l1": float(np.mean(l1s)), "psnr": float(np.mean(psnrs)),
            "mae_deg": float(np.mean(maes)), "per_view_l1": l1s,
            "per_view_psnr": psnrs, "per_view_mae": maes}


def relight_eval(model: SphereRendererModel, render_probe: str,
                 source_env: EnvFeatureNet, oracle_env: EnvironmentMap,
                 seed: int, n_views: int = 4, image_size: int = 64,
                 spp: int = 256, n_samples: int = 32,
                 material=None) -> dict:
    """Swap a foreign environment net into ``render_probe``'s slot, render,
    and score against the oracle under the matching real probe. Also checks
    that swapping back reproduces the original renders bit for bit.
    """
    from .brdf import Material
    from .color import srgb_encode
    from .geom import normalize as _norm
    from .metrics import metric_psnr
    from .oracle import render_sphere_image, sphere_camera

    rng = np.random.default_rng(seed)
    views = [_norm(rng.normal(size=3)) for _ in range(n_views)]
    mats = []
    for _ in range(n_views):
        if material is not None:
            mats.append(material)
        else:
            mats.append(Material(float(rng.uniform(0.05, 0.8)), float(rng.uniform()),
                                 tuple(rng.uniform(0.2, 1.0, size=3))))
    cams = [sphere_camera(v, width=image_size, height=image_size) for v in views]

    before = [render_sphere_view(model, cams[i], mats[i], render_probe,
                                 n_samples=n_samples)["srgb"] for i in range(n_views)]
    original = swap_environment(model, render_probe, source_env)
    psnrs = []
    for i in range(n_views):
        out = render_sphere_view(model, cams[i], mats[i], render_probe,
                                 n_samples=n_samples)
        ref = render_sphere_image(cams[i], mats[i], oracle_env, spp=spp,
                                  seed=int(rng.integers(2**31)), background="black")
        psnrs.append(metric_psnr(out["srgb"], srgb_encode(ref.rgb), mask=ref.mask))
    swap_environment(model, render_probe, original)
    after = [render_sphere_view(model, cams[i], mats[i], render_probe,
                                n_samples=n_samples)["srgb"] for i in range(n_views)]
    bitwise = all(a.tobytes() == b.tobytes() for a, b in zip(before, after))
    return {"psnr": float(np.mean(psnrs)), "per_view_psnr": psnrs,
            "swap_back_bitwise": bitwise}


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    l1: float
    sdf_mse: float
    eikonal: float
    beta: float
    lr: float
    seconds: float


def train_renderer(probes: dict[str, EnvironmentMap], seed: int, steps: int,
                   rays_per_step: int = 1024, n_samples: int = 16,
                   image_size: int = 64, spp_train: int = 48,
                   lambda_sdf: float = 0.1, lambda_eik: float = 0.01,
                   lr: float = 2e-3, lr_geo: float = 1e-2,
                   lr_final_frac: float = 0.1,
                   norm_mode: str = "l2", eik_subset: int = 128,
                   shade_floor: float = 1e-4,
                   detach_shading_normals: bool = True,
                   shading_from: ShadingNets | None = None,
                   freeze_shading: bool = False,
                   fixed_material: np.ndarray | None = None,
                   env_widths: tuple[int, ...] = (256, 256, 256, 256),
                   geo_widths: tuple[int, ...] = (64, 64, 64),
                   geo_octaves: int = 4,
                   log_every: int = 100,
                   progress=None) -> tuple[SphereRendererModel, list[TrainLogEntry]]:
    """Joint pre-training of environment nets, shading decoders, and the
    sphere geometry net against on-the-fly oracle batches.

    Deterministic for a fixed seed: initialization, batch synthesis, and
    sample jitter each draw from their own child stream of one seed
    sequence. ``shading_from``/``freeze_shading`` support the second-stage
    protocol where decoders come from an earlier run; ``fixed_material``
    pins every ray's material (scene-like fitting of a single sphere).
    """
    ss = np.random.SeedSequence(seed)
    init_rng, data_rng, jitter_rng, eik_rng = (np.random.default_rng(s)
                                               for s in ss.spawn(4))
    id_to_name = sorted(probes)
    probe_list = [probes[name] for name in id_to_name]
    model = build_renderer_model(id_to_name, init_rng, norm_mode=norm_mode,
                                 env_widths=env_widths, geo_widths=geo_widths,
                                 geo_octaves=geo_octaves)
    if shading_from is not None:
        model.shading = shading_from
        model.shading.set_trainable(not freeze_shading)

    # The geometry net carries the strongest direct supervision and tolerates
    # (needs, at desk step counts) a larger learning rate than the decoders.
    geo_set = {id(p) for p in model.geometry.parameters()}
    params = model.trainable_parameters()
    geo_params = [p for p in params if id(p) in geo_set]
    other_params = [p for p in params if id(p) not in geo_set]
    opt_geo = AdamState.for_params(geo_params, lr=lr_geo)
    opt = AdamState.for_params(other_params, lr=lr)
    log: list[TrainLogEntry] = []
    last_good: list[np.ndarray] | None = None

    for step in range(steps):
        t_start = time.perf_counter()
        batch = synthesize_batch(probe_list, data_rng, rays_per_step,
                                 image_size=image_size, spp=spp_train)
        if fixed_material is not None:
            batch.materials[:] = fixed_material
            # Retarget the oracle colors for the pinned material.
            from .oracle import shade_points

            sel = np.nonzero(batch.hit)[0]
            for pid in range(len(probe_list)):
                rows = sel[batch.probe_ids[sel] == pid]
                if rows.size:
                    pts = batch.origins[rows] + batch.t_hit[rows, None] * batch.dirs[rows]
                    batch.target_rgb[rows] = shade_points(
                        pts, batch.gt_normals[rows], -batch.dirs[rows],
                        batch.materials[rows, 0], batch.materials[rows, 1],
                        batch.materials[rows, 2:], probe_list[pid], spp_train, data_rng)

        in_bound, _, _ = ray_sphere_intersect(batch.origins, batch.dirs,
                                              np.zeros(3), model.bound_radius)
        keep = np.nonzero(in_bound)[0]
        origins, dirs = batch.origins[keep], batch.dirs[keep]
        mats = batch.materials[keep].astype(np.float32)
        pids = batch.probe_ids[keep]
        hit = batch.hit[keep]
        target_lin = batch.target_rgb[keep]

        with T.Tape() as tape:
            fw = sphere_forward(model, origins, dirs, mats, pids, id_to_name,
                                n_samples, rng=jitter_rng,
                                eik_subset=eik_subset, eik_rng=eik_rng,
                                shade_floor=shade_floor,
                                detach_normals=detach_shading_normals)
            from .color import srgb_encode

            hit_rows = np.nonzero(hit)[0]
            target_srgb = srgb_encode(target_lin[hit_rows]).astype(np.float32)
            pred_hit = T.gather_rows(fw["rgb_srgb"], hit_rows)
            l1 = T.tmean(T.absolute(pred_hit - Tensor(target_srgb)), accum_f64=True)

            sdf_target = sphere_sdf(fw["positions"]).astype(np.float32)
            sdf_mse = T.tmean(T.square(fw["sdf"] - Tensor(sdf_target)), accum_f64=True)

            from .volume import eikonal_loss

            eik = eikonal_loss(fw["eik_grads"])
            loss = l1 + lambda_sdf * sdf_mse + lambda_eik * eik
            tape.backward(loss)

        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            if last_good is not None:
                for p, saved in zip(params, last_good):
                    p.data = saved
            raise NanGradientError(f"non-finite loss at step {step}")
        step_lr = cosine_lr(step, steps, lr, lr_final_frac)
        adam_step(geo_params, opt_geo, lr=cosine_lr(step, steps, lr_geo, lr_final_frac))
        adam_step(other_params, opt, lr=step_lr)
        model.density.clamp()

        if step % log_every == 0 or step == steps - 1:
            entry = TrainLogEntry(step=step, loss=loss_val, l1=float(l1.data),
                                  sdf_mse=float(sdf_mse.data), eikonal=float(eik.data),
                                  beta=model.density.value(), lr=step_lr,
                                  seconds=time.perf_counter() - t_start)
            log.append(entry)
            last_good = [p.data.copy() for p in params]
            if progress is not None:
                progress(entry)

    return model, log
