"""Ground-truth renderer: image-based lighting of analytic spheres.

Monte Carlo shading with two estimators per point: a cosine-hemisphere
estimate of the diffuse irradiance and a GGX importance-sampled estimate of
the specular integral. ``shade_uniform`` provides the independent
brute-force route (uniform hemisphere over the full BRDF) used to
cross-check the importance-sampled one.

Scenes are lists of analytic spheres; an optional single reflection bounce
feeds inter-reflected radiance into the light integrals (secondary hits are
shaded direct-only), which supplies ground truth for the inter-reflection
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brdf import (ALPHA_GGX_MIN, Material, brdf_eval, build_onb,
                   f0_from_material, fresnel_schlick,
                   sample_cosine_hemisphere, sample_ggx_half_vectors,
                   smith_g2)
from .envmap import EnvironmentMap
from .geom import Camera, camera_rays, look_at, normalize, ray_sphere_intersect

__all__ = [
    "sphere_sdf",
    "Sphere",
    "SphereScene",
    "shade_ibl",
    "shade_points",
    "shade_uniform",
    "render_sphere_image",
    "render_scene_image",
    "OracleImage",
    "RendererBatch",
    "synthesize_batch",
    "sphere_camera",
    "view_sphere_c2w",
    "CANONICAL_CAMERA_RADIUS",
    "CANONICAL_FOV_X",
]

CANONICAL_CAMERA_RADIUS = 3.0
CANONICAL_FOV_X = 0.8  # radians; unit sphere fills ~85% of the frame width


def sphere_sdf(x: np.ndarray, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> np.ndarray:
    """Signed distance to a sphere: ||x - center|| - radius (positive outside)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = np.asarray(x, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return np.linalg.norm(d, axis=-1) - radius


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    material: Material


@dataclass
class SphereScene:
    """One or more analytic spheres under a distant environment."""

    spheres: list[Sphere]
    env: EnvironmentMap

    def sdf(self, x: np.ndarray) -> np.ndarray:
        values = np.stack([sphere_sdf(x, s.center, s.radius) for s in self.spheres])
        return values.min(axis=0)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Nearest-hit query. Returns (hit, t, normal, sphere index)."""
        n = origins.shape[0]
        best_t = np.full(n, np.inf)
        best_idx = np.full(n, -1, dtype=np.int64)
        for i, s in enumerate(self.spheres):
            hit, t_near, _ = ray_sphere_intersect(origins, dirs, s.center, s.radius)
            better = hit & (t_near < best_t) & (t_near > 0.0)
            best_t = np.where(better, t_near, best_t)
            best_idx = np.where(better, i, best_idx)
        hit = best_idx >= 0
        t = np.where(hit, best_t, np.inf)
        points = origins + np.where(hit, best_t, 0.0)[:, None] * dirs
        normals = np.zeros_like(origins)
        for i, s in enumerate(self.spheres):
            sel = best_idx == i
            if np.any(sel):
                normals[sel] = normalize(points[sel] - np.asarray(s.center))
        return hit, t, normals, best_idx


def _material_arrays(count: int, mat: Material):
    return (np.full(count, mat.alpha), np.full(count, mat.metallic),
            np.tile(np.asarray(mat.base_color, dtype=np.float64), (count, 1)))


def _incoming_radiance(scene: SphereScene, origins: np.ndarray, dirs: np.ndarray,
                       rng: np.random.Generator, bounces: int,
                       n_secondary: int) -> np.ndarray:
    """Radiance arriving along rays: environment, or (with bounce budget)
    direct-lit geometry when the ray strikes a sphere."""
    out = scene.env.sample(dirs)
    if bounces <= 0 or len(scene.spheres) == 0:
        return out
    hit, t, normals, idx = scene.intersect(origins, dirs)
    if not np.any(hit):
        return out
    sel = np.nonzero(hit)[0]
    points = origins[sel] + t[sel, None] * dirs[sel]
    alpha = np.empty(sel.size)
    metallic = np.empty(sel.size)
    base = np.empty((sel.size, 3))
    for i, s in enumerate(scene.spheres):
        m = idx[sel] == i
        alpha[m], metallic[m] = s.material.alpha, s.material.metallic
        base[m] = s.material.base_color
    out[sel] = shade_points(points, normals[sel], -dirs[sel], alpha, metallic, base,
                            scene.env, n_secondary, rng,
                            scene=scene, bounces=bounces - 1)
    return out


def shade_points(points: np.ndarray, normals: np.ndarray, views: np.ndarray,
                 alpha: np.ndarray, metallic: np.ndarray, base_color: np.ndarray,
                 env: EnvironmentMap, n_samples: int, rng: np.random.Generator,
                 scene: SphereScene | None = None, bounces: int = 0,
                 n_secondary: int = 16) -> np.ndarray:
    """Monte Carlo image-based shading with per-point material parameters.

    Diffuse: cosine-hemisphere estimate of irradiance times the
    Fresnel-weighted diffuse albedo (1 - F(n.v)) (1 - m) c_b. Specular: GGX
    half-vector importance sampling of the microfacet lobe. Deterministic
    given the generator state. With ``scene`` and ``bounces`` > 0, incoming
    radiance picks up one inter-reflection bounce (secondary hits shaded
    environment-only).
    """
    n = np.asarray(normals, dtype=np.float64)
    v = np.asarray(views, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    count = p.shape[0]
    if count == 0:
        return np.zeros((0, 3))
    alpha = np.asarray(alpha, dtype=np.float64)
    metallic = np.asarray(metallic, dtype=np.float64)
    base_color = np.asarray(base_color, dtype=np.float64)
    alpha_ggx = np.maximum(alpha * alpha, ALPHA_GGX_MIN)
    n_dot_v = np.clip(np.sum(n * v, axis=-1), 1e-6, 1.0)
    f0 = f0_from_material(metallic, base_color)  # (N, 3)

    def incoming(l_dirs: np.ndarray) -> np.ndarray:
        m = l_dirs.shape[1]
        flat_d = l_dirs.reshape(-1, 3)
        if scene is not None and bounces > 0:
            flat_o = np.repeat(p + 1e-4 * n, m, axis=0)
            rad = _incoming_radiance(scene, flat_o, flat_d, rng, bounces, n_secondary)
        else:
            rad = env.sample(flat_d)
        return rad.reshape(count, m, 3)

    # Diffuse: pdf = cos/pi cancels the BRDF's cos/pi, so the estimator is
    # the plain mean of incoming radiance over cosine-sampled directions.
    n_diff = max(n_samples // 2, 1)
    rad_d = incoming(sample_cosine_hemisphere(rng, n, n_diff))
    irradiance_over_pi = rad_d.mean(axis=1)
    kd = (1.0 - fresnel_schlick(n_dot_v, f0)) * (1.0 - metallic)[:, None]
    diffuse = kd * base_color * irradiance_over_pi

    # Specular: h ~ D(h)(n.h); per-sample weight F G2 (v.h) / ((n.v)(n.h)).
    n_spec = max(n_samples - n_diff, 1)
    h = sample_ggx_half_vectors(rng, n, alpha_ggx, n_spec)
    v_dot_h = np.sum(v[:, None, :] * h, axis=-1)
    l = 2.0 * v_dot_h[..., None] * h - v[:, None, :]
    n_dot_l = np.sum(n[:, None, :] * l, axis=-1)
    n_dot_h = np.clip(np.sum(n[:, None, :] * h, axis=-1), 1e-8, 1.0)
    valid = (n_dot_l > 0.0) & (v_dot_h > 0.0)
    g2 = smith_g2(n_dot_v[:, None], np.clip(n_dot_l, 0.0, 1.0), alpha_ggx[:, None])
    f = fresnel_schlick(v_dot_h, f0[:, None, :])  # (N, S, 3)
    weight = g2 * np.clip(v_dot_h, 0.0, None) / (n_dot_v[:, None] * n_dot_h)
    weight = np.where(valid, weight, 0.0)
    rad_s = incoming(l)
    specular = (rad_s * f * weight[..., None]).mean(axis=1)

    return diffuse + specular


def shade_ibl(points: np.ndarray, normals: np.ndarray, views: np.ndarray,
              mat: Material, env: EnvironmentMap, n_samples: int,
              rng: np.random.Generator | int,
              scene: SphereScene | None = None, bounces: int = 0,
              n_secondary: int = 16) -> np.ndarray:
    """Single-material wrapper over :func:`shade_points`."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    count = np.asarray(points).shape[0]
    alpha, metallic, base = _material_arrays(count, mat)
    return shade_points(points, normals, views, alpha, metallic, base, env,
                        n_samples, rng, scene=scene, bounces=bounces,
                        n_secondary=n_secondary)


def shade_uniform(points: np.ndarray, normals: np.ndarray, views: np.ndarray,
                  mat: Material, env: EnvironmentMap, n_samples: int,
                  rng: np.random.Generator | int) -> np.ndarray:
    """Brute-force reference: uniform-hemisphere estimate of the full
    reflection integral (diffuse + specular), 2 pi / N sum L f_r (n.l)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    n = np.asarray(normals, dtype=np.float64)
    v = np.asarray(views, dtype=np.float64)
    count = n.shape[0]
    t, bt = build_onb(n)
    out = np.zeros((count, 3))
    # Chunk the sample dimension to bound memory at high sample counts.
    chunk = max(1, min(n_samples, 4 * 131072 // max(count, 1)))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        u1 = rng.uniform(size=(count, m))
        u2 = rng.uniform(size=(count, m))
        z = u1
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
        phi = 2.0 * np.pi * u2
        l = (r * np.cos(phi))[..., None] * t[:, None, :] \
            + (r * np.sin(phi))[..., None] * bt[:, None, :] \
            + z[..., None] * n[:, None, :]
        rad = env.sample(l.reshape(-1, 3)).reshape(count, m, 3)
        n_rep = np.repeat(n, m, axis=0)
        v_rep = np.repeat(v, m, axis=0)
        fr = brdf_eval(n_rep, v_rep, l.reshape(-1, 3), mat).reshape(count, m, 3)
        out += (rad * fr * z[..., None]).sum(axis=1)
        done += m
    return out * (2.0 * np.pi / n_samples)


@dataclass
class OracleImage:
    """A rendered reference view plus its per-pixel ground truth."""

    rgb: np.ndarray      # (H, W, 3) linear radiance
    mask: np.ndarray     # (H, W) True where geometry was hit
    normals: np.ndarray  # (H, W, 3) unit normals at hits, 0 elsewhere
    depth: np.ndarray    # (H, W) hit distance, inf at misses
    camera: Camera


def render_sphere_image(cam: Camera, mat: Material, env: EnvironmentMap,
                        spp: int, seed: int,
                        background: str = "env") -> OracleImage:
    """Reference render of the canonical unit sphere at the origin.

    Misses show the environment (``background='env'``) or black
    (``background='black'``); the mask flags hits either way.
    """
    scene = SphereScene([Sphere((0.0, 0.0, 0.0), 1.0, mat)], env)
    return render_scene_image(cam, scene, spp, seed, bounces=0, background=background)


def render_scene_image(cam: Camera, scene: SphereScene, spp: int, seed: int,
                       bounces: int = 0, background: str = "env") -> OracleImage:
    if float(scene.sdf(cam.origin[None, :])[0]) <= 0.0:
        raise ValueError("camera origin is inside scene geometry")
    rng = np.random.default_rng(seed)
    origins, dirs = camera_rays(cam)
    hit, t, normals, idx = scene.intersect(origins, dirs)
    h, w = cam.height, cam.width
    rgb = np.zeros((h * w, 3))
    if background == "env":
        rgb[~hit] = scene.env.sample(dirs[~hit])
    elif background != "black":
        raise ValueError(f"unknown background mode {background!r}")
    sel = np.nonzero(hit)[0]
    if sel.size:
        points = origins[sel] + t[sel, None] * dirs[sel]
        alpha = np.empty(sel.size)
        metallic = np.empty(sel.size)
        base = np.empty((sel.size, 3))
        for i, s in enumerate(scene.spheres):
            m = idx[sel] == i
            alpha[m], metallic[m] = s.material.alpha, s.material.metallic
            base[m] = s.material.base_color
        rgb[sel] = shade_points(points, normals[sel], -dirs[sel], alpha, metallic,
                                base, scene.env, spp, rng,
                                scene=scene, bounces=bounces)
    depth = np.where(hit, t, np.inf)
    return OracleImage(
        rgb=rgb.reshape(h, w, 3),
        mask=hit.reshape(h, w),
        normals=np.where(hit[:, None], normals, 0.0).reshape(h, w, 3),
        depth=depth.reshape(h, w),
        camera=cam,
    )


def view_sphere_c2w(view_dirs: np.ndarray, radius: float) -> np.ndarray:
    """Camera-to-world matrices (N, 4, 4) on the view sphere, batched."""
    d = normalize(np.asarray(view_dirs, dtype=np.float64))
    eye = d * radius
    backward = d
    up = np.broadcast_to(np.array([0.0, 0.0, 1.0]), backward.shape)
    degenerate = np.abs(backward[:, 2]) > 0.999
    up = np.where(degenerate[:, None], np.array([0.0, 1.0, 0.0]), up)
    right = normalize(np.cross(up, backward), eps=1e-12)
    true_up = np.cross(backward, right)
    c2w = np.zeros((d.shape[0], 4, 4))
    c2w[:, :3, 0] = right
    c2w[:, :3, 1] = true_up
    c2w[:, :3, 2] = backward
    c2w[:, :3, 3] = eye
    c2w[:, 3, 3] = 1.0
    return c2w


def sphere_camera(direction: np.ndarray, width: int = 64, height: int = 64,
                  radius: float = CANONICAL_CAMERA_RADIUS,
                  fov_x: float = CANONICAL_FOV_X) -> Camera:
    """Camera on the view sphere looking at the origin."""
    eye = normalize(np.asarray(direction, dtype=np.float64)) * radius
    return Camera(c2w=look_at(eye, np.zeros(3)), fov_x=fov_x, width=width, height=height)


@dataclass
class RendererBatch:
    """Supervised ray records for renderer pre-training.

    Targets are linear radiance from the oracle; SDF supervision comes from
    evaluating :func:`sphere_sdf` at whatever positions the trainer samples.
    """

    origins: np.ndarray    # (N, 3)
    dirs: np.ndarray       # (N, 3)
    materials: np.ndarray  # (N, 5): alpha, metallic, base rgb
    probe_ids: np.ndarray  # (N,)
    target_rgb: np.ndarray  # (N, 3) linear
    hit: np.ndarray        # (N,)
    t_hit: np.ndarray      # (N,) hit distance (inf at miss)
    gt_normals: np.ndarray  # (N, 3) at hits


def synthesize_batch(probes: list[EnvironmentMap], rng: np.random.Generator,
                     n_rays: int, image_size: int = 64, spp: int = 64,
                     hit_fraction: float = 0.875) -> RendererBatch:
    """Draw supervised rays of the canonical sphere on the fly.

    Every record independently samples a camera pose uniformly on the view
    sphere, a pixel, a material triple with uniform marginals, and a probe.
    A target fraction of rays is aimed at the sphere's projected disk
    (shading signal); the rest hit background (empty-space supervision).
    """
    n_probes = len(probes)
    if n_probes < 1:
        raise ValueError("need at least one probe")
    view_dirs = normalize(rng.normal(size=(n_rays, 3)))
    alphas = rng.uniform(0.0, 1.0, size=n_rays)
    metallics = rng.uniform(0.0, 1.0, size=n_rays)
    base_colors = rng.uniform(0.0, 1.0, size=(n_rays, 3))
    probe_ids = rng.integers(0, n_probes, size=n_rays)

    # Rays in camera space: aim either inside the sphere's projected disk or
    # anywhere in the frame (for the background fraction).
    f = 0.5 * image_size / np.tan(0.5 * CANONICAL_FOV_X)
    disk_r_pix = f * np.tan(np.arcsin(1.0 / CANONICAL_CAMERA_RADIUS))
    want_hit = rng.uniform(size=n_rays) < hit_fraction
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n_rays)
    rad = np.sqrt(rng.uniform(size=n_rays))
    px_hit = disk_r_pix * rad * np.cos(ang) + 0.5 * image_size
    py_hit = disk_r_pix * rad * np.sin(ang) + 0.5 * image_size
    px_any = rng.uniform(0.0, image_size, size=n_rays)
    py_any = rng.uniform(0.0, image_size, size=n_rays)
    px = np.where(want_hit, px_hit, px_any)
    py = np.where(want_hit, py_hit, py_any)

    x_cam = (px - 0.5 * image_size) / f
    y_cam = -(py - 0.5 * image_size) / f
    dirs_cam = normalize(np.stack([x_cam, y_cam, -np.ones_like(x_cam)], axis=-1))

    c2w = view_sphere_c2w(view_dirs, CANONICAL_CAMERA_RADIUS)
    origins = c2w[:, :3, 3]
    dirs = np.einsum("nij,nj->ni", c2w[:, :3, :3], dirs_cam)

    hit, t_near, _ = ray_sphere_intersect(origins, dirs, np.zeros(3), 1.0)
    t_safe = np.where(hit, t_near, 0.0)
    points = origins + t_safe[:, None] * dirs
    normals = np.where(hit[:, None], normalize(points, eps=1e-12), 0.0)

    target = np.zeros((n_rays, 3))
    for pid in range(n_probes):
        sel = np.nonzero(hit & (probe_ids == pid))[0]
        if sel.size:
            target[sel] = shade_points(points[sel], normals[sel], -dirs[sel],
                                       alphas[sel], metallics[sel], base_colors[sel],
                                       probes[pid], spp, rng)

    materials = np.concatenate([alphas[:, None], metallics[:, None], base_colors], axis=1)
    return RendererBatch(origins=origins, dirs=dirs, materials=materials,
                         probe_ids=probe_ids, target_rgb=target, hit=hit,
                         t_hit=np.where(hit, t_near, np.inf), gt_normals=normals)
