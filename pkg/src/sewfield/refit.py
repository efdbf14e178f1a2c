"""Latent-space refitting of panel shapes against 2D target contours.

The decision variables are the panel latents and log scales; placements stay
fixed.  Boundary vertices are functions of the latents through the
iso-surface rule in :mod:`sewfield.meshing`, so the objective

    lambda_c * chamfer + lambda_l * laplacian + lambda_s * seam

back-propagates to ``z`` without differentiating the meshing itself.  A seam
joining one host edge to several partners compares the host length with the
partner sum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .meshing import (
    LatentField,
    MeshingError,
    PanelMesh,
    boundary_vertices,
    chamfer,
    mesh_panel,
    mesh_to_panel,
    project_to_zero,
)
from .nn import DTYPE
from .pattern import PatternError, SewingPattern, check_panel, seam_groups

log = logging.getLogger(__name__)


@dataclass
class RefitTarget:
    """Per-panel target contours (cm, panel frame) plus loss weights."""

    contours: list
    lambda_c: float = 1.0
    lambda_l: float = 0.1
    lambda_s: float = 1.0

    def __post_init__(self):
        if not self.contours or any(len(c) == 0 for c in self.contours):
            raise ValueError("refit targets must be nonempty")
        if min(self.lambda_c, self.lambda_l, self.lambda_s) < 0:
            raise ValueError("refit weights must be nonnegative")
        self.contours = [np.asarray(c, dtype=float) for c in self.contours]


@dataclass
class RefitResult:
    pattern: SewingPattern
    latents: np.ndarray
    log_scales: np.ndarray
    trace: list
    meshes: list
    failed_at: int | None = None
    checks: list = field(default_factory=list)


def laplacian_loss(v: torch.Tensor) -> torch.Tensor:
    """Mean squared offset of each loop vertex from the midpoint of its neighbours."""
    lap = v - 0.5 * (torch.roll(v, 1, 0) + torch.roll(v, -1, 0))
    return (lap**2).sum(-1).mean()


def segment_lengths(v: torch.Tensor, mesh: PanelMesh) -> torch.Tensor:
    lens = []
    for seg in mesh.segments():
        p = v[torch.as_tensor(seg)]
        lens.append((p[1:] - p[:-1]).norm(dim=-1).sum())
    return torch.stack(lens)


def _match_breaks(mesh: PanelMesh, reference: np.ndarray) -> np.ndarray:
    """Order of mesh segments so that segment ``k`` starts nearest ``reference[k]``."""
    starts = mesh.boundary_points[mesh.segment_breaks]
    if len(starts) != len(reference):
        raise MeshingError(f"edge count changed from {len(reference)} to {len(starts)}")
    d = np.linalg.norm(reference[:, None] - starts[None], axis=-1)
    order = np.argmin(d, axis=1)
    if len(set(order.tolist())) != len(order):
        raise MeshingError("detected endpoints no longer match the panel edges one to one")
    return order


def _reorder(mesh: PanelMesh, order: np.ndarray) -> PanelMesh:
    """Rotate the break list so ``segments()[k]`` is edge ``k``; order must be cyclic."""
    n = len(order)
    shift = int(order[0])
    if not np.array_equal(order, (shift + np.arange(n)) % n):
        raise MeshingError("segment order is not a rotation of the edge order")
    breaks = np.roll(mesh.segment_breaks, -shift)
    return PanelMesh(mesh.vertices, mesh.faces, mesh.boundary, breaks, mesh.flags, mesh.grid_n)


def _mesh_state(vae, z, reference_starts, grid_n):
    mp = mesh_panel(z, vae, grid_n=grid_n)
    mesh = _reorder(mp.mesh, _match_breaks(mp.mesh, reference_starts))
    return mesh


def _reproject(vae, z, mesh: PanelMesh) -> PanelMesh:
    V = mesh.vertices.copy()
    V[mesh.boundary], _ = project_to_zero(LatentField.from_vae(vae, z), V[mesh.boundary], max_step=2.0 / mesh.grid_n)
    return PanelMesh(V, mesh.faces, mesh.boundary, mesh.segment_breaks, mesh.flags, mesh.grid_n)


def decoded_contours(pattern: SewingPattern, vae, latents=None, grid_n: int = 128) -> list[np.ndarray]:
    """Boundary loops (cm, panel frame) of the decoded panels."""
    Z = vae.transform(pattern.panels) if latents is None else np.asarray(latents)
    return [mesh_panel(z, vae, grid_n=grid_n).mesh.boundary_points * p.scale for z, p in zip(Z, pattern.panels)]


def scaled_target(pattern: SewingPattern, vae, factor, latents=None, grid_n: int = 128, **weights) -> RefitTarget:
    """Decoded contours scaled by ``factor`` (scalar or per-axis pair)."""
    f = np.broadcast_to(np.asarray(factor, dtype=float), (2,))
    return RefitTarget([c * f for c in decoded_contours(pattern, vae, latents, grid_n)], **weights)


def refit(pattern: SewingPattern, target: RefitTarget, vae, iters: int = 300, lr: float = 5e-3, scale_lr: float = 1e-2,
          remesh_every: int = 10, latents=None, grid_n: int = 128) -> RefitResult:
    """Gradient descent on panel latents and log scales toward ``target``.

    Boundary vertices are re-projected onto the moving zero level set every
    iteration; a full remesh (with endpoint detection and a validity check)
    runs every ``remesh_every`` iterations.  If a remesh fails the last valid
    state is returned with ``failed_at`` set.
    """
    if len(target.contours) != pattern.n_panels:
        raise ValueError("one target contour per panel is required")
    Z0 = vae.transform(pattern.panels) if latents is None else np.asarray(latents, dtype=float)
    z = torch.as_tensor(Z0, dtype=DTYPE).clone().requires_grad_(True)
    logs = torch.as_tensor(np.log([p.scale for p in pattern.panels]), dtype=DTYPE).clone().requires_grad_(True)
    opt = torch.optim.Adam([{"params": [z], "lr": lr}, {"params": [logs], "lr": scale_lr}])
    targets = [torch.as_tensor(c, dtype=DTYPE) for c in target.contours]
    refs = {i: np.asarray(p.endpoints) for i, p in enumerate(pattern.panels)}
    seams = seam_groups(pattern)

    for p in vae.decoder_.parameters():
        p.requires_grad_(False)
    fn = vae.field
    meshes = [_mesh_state(vae, Z0[i], refs[i], grid_n) for i in range(pattern.n_panels)]
    last_good = (z.detach().clone(), logs.detach().clone(), list(meshes))
    trace, checks, failed = [], [], None
    try:
        for it in range(iters + 1):
            zn = z.detach().numpy()
            if it > 0:
                try:
                    if it % remesh_every == 0:
                        new = []
                        for i in range(pattern.n_panels):
                            m = _mesh_state(vae, zn[i], meshes[i].boundary_points[meshes[i].segment_breaks], grid_n)
                            check_panel(mesh_to_panel(m, float(np.exp(logs[i].item()))))
                            new.append(m)
                        meshes = new
                        checks.append(it)
                        last_good = (z.detach().clone(), logs.detach().clone(), list(meshes))
                    else:
                        meshes = [_reproject(vae, zn[i], meshes[i]) for i in range(pattern.n_panels)]
                except (MeshingError, PatternError) as exc:
                    failed = it
                    log.warning("refit stopped at iteration %d: %s", it, exc)
                    break
            verts = [boundary_vertices(z[i], meshes[i], fn) * torch.exp(logs[i]) for i in range(pattern.n_panels)]
            l_cd = sum(chamfer(v, t) for v, t in zip(verts, targets)) / len(verts)
            l_lap = sum(laplacian_loss(v) for v in verts) / len(verts)
            lens = {i: segment_lengths(v, meshes[i]) for i, v in enumerate(verts)}
            l_seam = sum(((lens[h[0]][h[1]] - sum(lens[r[0]][r[1]] for r in grp)) ** 2 for h, grp in seams),
                         torch.zeros((), dtype=DTYPE))
            loss = target.lambda_c * l_cd + target.lambda_l * l_lap + target.lambda_s * l_seam
            if not torch.isfinite(loss):
                failed = it
                break
            trace.append({"iter": it, "loss": loss.item(), "chamfer": l_cd.item(), "laplacian": l_lap.item(),
                          "seam": l_seam.item()})
            if it == iters:
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
    finally:
        for p in vae.decoder_.parameters():
            p.requires_grad_(True)

    if failed is not None:
        z_f, logs_f, meshes = last_good
    else:
        z_f, logs_f = z.detach(), logs.detach()
        try:
            meshes = [_mesh_state(vae, z_f[i].numpy(), meshes[i].boundary_points[meshes[i].segment_breaks], grid_n)
                      for i in range(pattern.n_panels)]
        except MeshingError:
            z_f, logs_f, meshes = last_good
            failed = iters
    panels = tuple(mesh_to_panel(m, float(np.exp(s))) for m, s in zip(meshes, logs_f.numpy()))
    out = SewingPattern(panels, pattern.placements, pattern.stitches)
    return RefitResult(out, z_f.numpy(), logs_f.numpy(), trace, meshes, failed, checks)


def chamfer_cm(result: RefitResult, target: RefitTarget) -> np.ndarray:
    """Per-panel mean nearest-point distance (cm, symmetric) between refitted and target contours."""
    out = []
    for m, s, t in zip(result.meshes, result.log_scales, target.contours):
        v = torch.as_tensor(m.boundary_points * np.exp(s))
        out.append(chamfer(v, torch.as_tensor(t), squared=False).item())
    return np.array(out)


def seam_mismatch(pattern: SewingPattern) -> np.ndarray:
    """Relative length mismatch ``|a - b| / max(a, b)`` of every seam (partner lengths summed)."""
    out = []
    for host, group in seam_groups(pattern):
        a, b = pattern.edge_length(host), sum(pattern.edge_length(r) for r in group)
        out.append(abs(a - b) / max(a, b))
    return np.array(out)
