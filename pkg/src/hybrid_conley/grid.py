"""Uniform per-mode box grids over the state space.

Boxes are closed axis-aligned cells of side ``h`` anchored at each mode's
domain lows; cells overlap only on faces. A box id is ``(mode, multi_index)``.
Boxes whose region misses the mode's carved region entirely are dropped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .system import HybridSystemDef, ModeSpec, State

BoxId = tuple[int, tuple[int, ...]]


class GridTooFine(ValueError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grids of resolution ``h`` over every mode of a system."""

    sys: HybridSystemDef
    h: float
    node_cap: int = 5_000_000

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        cells = {}
        lows = {}
        highs = {}
        margins = {}
        for m in self.sys.modes:
            span = m.highs - m.lows
            cells[m.mode_id] = tuple(
                int(v) for v in np.maximum(1, np.ceil(span / self.h - 1e-9).astype(int))
            )
            lows[m.mode_id] = tuple(float(v) for v in m.lows)
            highs[m.mode_id] = tuple(float(v) for v in m.highs)
            margins[m.mode_id] = self._mode_ineq_margin(m)
        object.__setattr__(self, "_cells", cells)
        object.__setattr__(self, "_lows", lows)
        object.__setattr__(self, "_highs", highs)
        object.__setattr__(self, "_margins", margins)

    def _mode_ineq_margin(self, m: ModeSpec) -> float:
        if not m.ineqs:
            return 0.0
        axes = [np.linspace(lo, hi, 5) for lo, hi in m.domain]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        grad_norm = 0.0
        for g in m.ineqs:
            grads = np.stack([g.partial(i).eval_batch(pts) for i in range(m.dim)], axis=1)
            grad_norm = max(grad_norm, float(np.max(np.linalg.norm(grads, axis=1))))
        return grad_norm * self.h * np.sqrt(m.dim)

    def lattice_size(self) -> int:
        """Total virtual box count across modes (nothing is materialized)."""
        return sum(int(np.prod(self.cells_per_axis(m.mode_id))) for m in self.sys.modes)

    def cells_per_axis(self, mode_id: int) -> np.ndarray:
        return np.array(self._cells[mode_id], dtype=int)

    def box_bounds(self, box: BoxId) -> tuple[np.ndarray, np.ndarray]:
        mode_id, idx = box
        m = self.sys.mode(mode_id)
        lo = m.lows + self.h * np.array(idx, dtype=float)
        hi = np.minimum(lo + self.h, m.highs)
        return lo, hi

    def box_center(self, box: BoxId) -> np.ndarray:
        lo, hi = self.box_bounds(box)
        return 0.5 * (lo + hi)

    def box_of_point(self, s: State) -> BoxId:
        m = self.sys.mode(s.mode)
        n = self.cells_per_axis(s.mode)
        idx = np.floor((s.coords - m.lows) / self.h).astype(int)
        idx = np.clip(idx, 0, n - 1)
        return (s.mode, tuple(int(i) for i in idx))

    def boxes_containing_point(self, s: State, tol: float = 1e-12) -> list[BoxId]:
        """All boxes whose closed region contains the point (faces shared)."""
        m = self.sys.mode(s.mode)
        n = self.cells_per_axis(s.mode)
        x = s.coords
        choices = []
        for d in range(m.dim):
            raw = (x[d] - m.lows[d]) / self.h
            base = int(np.floor(raw))
            cands = {min(max(base, 0), n[d] - 1)}
            if abs(raw - round(raw)) < tol / self.h + 1e-12:
                k = int(round(raw))
                for c in (k - 1, k):
                    if 0 <= c < n[d]:
                        cands.add(c)
            choices.append(sorted(cands))
        return [(s.mode, tup) for tup in itertools.product(*choices)]

    def boxes_near_point(self, mode_id: int, x, radius: float) -> list[BoxId]:
        """Boxes whose closed region is within ``radius`` of the point."""
        lows = self._lows[mode_id]
        highs = self._highs[mode_id]
        n = self._cells[mode_id]
        h = self.h
        dim = len(lows)
        xs = [float(v) for v in x]
        ranges = []
        for d in range(dim):
            a = int((xs[d] - radius - lows[d]) // h)
            b = int((xs[d] + radius - lows[d]) // h)
            a = 0 if a < 0 else (n[d] - 1 if a > n[d] - 1 else a)
            b = 0 if b < 0 else (n[d] - 1 if b > n[d] - 1 else b)
            ranges.append(range(a, b + 1))
        r2 = (radius + 1e-12) ** 2
        out = []
        for tup in itertools.product(*ranges):
            dist2 = 0.0
            for d in range(dim):
                blo = lows[d] + h * tup[d]
                bhi = blo + h
                if bhi > highs[d]:
                    bhi = highs[d]
                v = xs[d]
                if v < blo:
                    dist2 += (blo - v) ** 2
                elif v > bhi:
                    dist2 += (v - bhi) ** 2
            if dist2 <= r2:
                out.append((mode_id, tup))
        return out

    def box_region_intersects_state_space(self, box: BoxId, probe: int = 3) -> bool:
        """Conservative test that a box meets the mode's carved region,
        with a one-box Lipschitz slack so boundary slivers are kept."""
        mode_id, _ = box
        m = self.sys.mode(mode_id)
        if not m.ineqs:
            return True
        lo, hi = self.box_bounds(box)
        axes = [np.linspace(a, b, probe) for a, b in zip(lo, hi)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        worst = np.full(pts.shape[0], -np.inf)
        for g in m.ineqs:
            worst = np.maximum(worst, g.eval_batch(pts))
        return bool(np.min(worst) <= self._margins[mode_id])

    def iter_boxes(self, mode_id: int):
        n = self.cells_per_axis(mode_id)
        for tup in itertools.product(*[range(k) for k in n]):
            yield (mode_id, tup)

    def active_boxes(self) -> list[BoxId]:
        """All boxes that meet the state space, across modes."""
        out = []
        for m in self.sys.modes:
            for box in self.iter_boxes(m.mode_id):
                if self.box_region_intersects_state_space(box):
                    out.append(box)
        return out

    def sample_points(self, box: BoxId, samples_per_box: int | None = None) -> np.ndarray:
        """Corners + center + face midpoints, filtered to the mode region.

        ``samples_per_box`` above the default count switches to a sub-lattice
        of matching density.
        """
        mode_id, _ = box
        m = self.sys.mode(mode_id)
        lo, hi = self.box_bounds(box)
        dim = m.dim
        base = 2**dim + 2 * dim + 1
        if samples_per_box is not None and samples_per_box > base:
            k = max(2, int(np.ceil(samples_per_box ** (1.0 / dim))))
            axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
            pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        else:
            corners = np.stack(
                [g.ravel() for g in np.meshgrid(*[(a, b) for a, b in zip(lo, hi)], indexing="ij")],
                axis=1,
            )
            center = 0.5 * (lo + hi)
            mids = []
            for d in range(dim):
                for v in (lo[d], hi[d]):
                    p = center.copy()
                    p[d] = v
                    mids.append(p)
            pts = np.vstack([corners, center[None, :], np.array(mids)])
            pts = np.unique(pts, axis=0)
        keep = np.ones(pts.shape[0], dtype=bool)
        for g in m.ineqs:
            keep &= g.eval_batch(pts) <= 1e-9
        pts = pts[keep]
        if pts.shape[0] == 0:
            # sliver box: look for interior points on a denser lattice
            axes = [np.linspace(a, b, 5) for a, b in zip(lo, hi)]
            dense = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            keep = np.ones(dense.shape[0], dtype=bool)
            for g in m.ineqs:
                keep &= g.eval_batch(dense) <= 1e-9
            pts = dense[keep]
        return pts

    def guard_points_in_box(self, box: BoxId, per_axis: int = 3) -> list[tuple[int, np.ndarray]]:
        """(guard index, point) pairs on guard surfaces inside the box.

        Lattice points on the surface are kept; sign changes of psi along
        lattice edges are refined by bisection. Used to guarantee that every
        guard-intersecting box carries reset edges.
        """
        mode_id, _ = box
        m = self.sys.mode(mode_id)
        lo, hi = self.box_bounds(box)
        axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        out: list[tuple[int, np.ndarray]] = []
        for gi, comp in enumerate(m.guards):
            vals = comp.psi.eval_batch(pts)
            found: list[np.ndarray] = []
            for p, v in zip(pts, vals):
                if abs(v) <= self.sys.event_tol and comp.ineqs_hold(p, 1e-9):
                    found.append(np.array(p))
            shape = tuple([per_axis] * m.dim)
            vals_nd = vals.reshape(shape)
            for axis in range(m.dim):
                sl_lo = [slice(None)] * m.dim
                sl_hi = [slice(None)] * m.dim
                sl_lo[axis] = slice(0, -1)
                sl_hi[axis] = slice(1, None)
                for idx in np.argwhere(vals_nd[tuple(sl_lo)] * vals_nd[tuple(sl_hi)] < 0):
                    a_idx = list(idx)
                    b_idx = list(idx)
                    b_idx[axis] += 1
                    a = np.array([axes[d][a_idx[d]] for d in range(m.dim)])
                    b = np.array([axes[d][b_idx[d]] for d in range(m.dim)])
                    fa = comp.psi(a)
                    for _ in range(60):
                        mid = 0.5 * (a + b)
                        fm = comp.psi(mid)
                        if fa * fm <= 0:
                            b = mid
                        else:
                            a, fa = mid, fm
                    p = 0.5 * (a + b)
                    if comp.ineqs_hold(p, 1e-9) and m.in_region(p, 1e-9):
                        found.append(p)
            # dedupe nearby points
            uniq: list[np.ndarray] = []
            for p in found:
                if all(np.linalg.norm(p - q) > 1e-9 for q in uniq):
                    uniq.append(p)
            out.extend((gi, p) for p in uniq)
        return out

    def dilate(self, boxes, layers: int = 1) -> set[BoxId]:
        """The set of boxes within ``layers`` cells of the given set."""
        out: set[BoxId] = set()
        for mode_id, idx in boxes:
            n = self.cells_per_axis(mode_id)
            ranges = [
                range(max(0, i - layers), min(int(n[d]) - 1, i + layers) + 1)
                for d, i in enumerate(idx)
            ]
            for tup in itertools.product(*ranges):
                out.add((mode_id, tup))
        return out

    def box_distance_to_point(self, box: BoxId, mode_id: int, x: np.ndarray) -> float:
        if box[0] != mode_id:
            return float("inf")
        lo, hi = self.box_bounds(box)
        nearest = np.clip(x, lo, hi)
        return float(np.linalg.norm(nearest - x))
