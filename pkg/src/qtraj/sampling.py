"""Reproducible sampling of trajectory initial conditions.

Initial positions are drawn from the position density at the start time
and initial momenta from the closed-form momentum density, both by
rejection sampling against analytic envelopes, so the draws are exact with
respect to the target densities (no quadrature or inversion error).

Reproducibility contract: every random quantity comes from a
:class:`SeededStream`, a named position in a seeded family of independent
generators.  Trajectory ``i`` of an ensemble uses stream index ``i``, and
its position is always drawn before its momentum, so ensembles with the
same master seed agree trajectory-by-trajectory regardless of ensemble
size, execution order, or thread count -- and the two guidance theories
see identical initial positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wavefield import (
    DoubleSlitParams,
    momentum_density,
    node_floor,
    norm_constant,
    p_bb,
    rho,
    sigma_t,
)

#: Allowed relative overshoot of density/envelope before declaring a bug.
_ENVELOPE_SLACK = 1.0 + 1e-9

#: Proposal batch size floor; acceptance is ~1/2 for both samplers, so one
#: batch nearly always suffices for a single draw.
_MIN_BATCH = 64

THEORIES = ("dbb", "revised")


class EnvelopeViolation(Exception):
    """Raised when a target density exceeds its rejection envelope (an implementation bug)."""


@dataclass(frozen=True)
class SeededStream:
    """Addressable member of a family of independent random streams."""

    master_seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        if self.stream_index < 0:
            raise ValueError(f"stream_index must be nonnegative, got {self.stream_index!r}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; equal streams yield equal sequences."""
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, offset: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.stream_index + offset)


@dataclass(frozen=True)
class InitialCondition:
    """Start state of one trajectory; with the theory, it fixes the path."""

    x0: float
    p0: float
    t0: float = 0.0
    theory: str = "revised"

    def __post_init__(self) -> None:
        if self.theory not in THEORIES:
            raise ValueError(f"theory must be one of {THEORIES}, got {self.theory!r}")


def _gaussian_pdf(x, center, width):
    return np.exp(-0.5 * ((x - center) / width) ** 2) / (width * np.sqrt(2.0 * np.pi))


def _draw_positions(n: int, rng: np.random.Generator, params: DoubleSlitParams, t0: float) -> np.ndarray:
    """Rejection-sample n positions from rho(., t0) using a live generator.

    Proposal: equal mixture of Gaussians at the two packet centers with the
    time-spread width; rho <= (4/N) * proposal pointwise, with equality
    only for fully overlapping packets.
    """
    width = float(sigma_t(params, t0))
    bound = 4.0 / norm_constant(params)
    floor = float(node_floor(params, t0))
    out = np.empty(n, dtype=float)
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), _MIN_BATCH)
        centers = np.where(rng.random(batch) < 0.5, -params.x_half, params.x_half)
        x = rng.normal(centers, width)
        proposal = 0.5 * (_gaussian_pdf(x, -params.x_half, width) + _gaussian_pdf(x, params.x_half, width))
        density = rho(x, t0, params)
        ratio = density / (bound * proposal)
        worst = ratio.max()
        if worst > _ENVELOPE_SLACK:
            raise EnvelopeViolation(
                f"position density exceeds its envelope by factor {worst:.17g} at t0={t0!r}"
            )
        keep = (rng.random(batch) < ratio) & (density > floor)
        accepted = x[keep]
        take = min(accepted.size, n - filled)
        out[filled : filled + take] = accepted[:take]
        filled += take
    return out


def _draw_momenta(n: int, rng: np.random.Generator, params: DoubleSlitParams) -> np.ndarray:
    """Rejection-sample n momenta from the closed-form momentum density.

    Proposal: Gaussian of width sigma_p; the density/envelope ratio reduces
    to cos^2(x_half * p / hbar) <= 1 analytically, but the acceptance
    probability is computed from the density itself so a wrong density
    cannot pass silently.
    """
    sp = params.sigma_p
    bound = 4.0 / norm_constant(params)
    out = np.empty(n, dtype=float)
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), _MIN_BATCH)
        p = rng.normal(0.0, sp, size=batch)
        ratio = momentum_density(p, params) / (bound * _gaussian_pdf(p, 0.0, sp))
        worst = ratio.max()
        if worst > _ENVELOPE_SLACK:
            raise EnvelopeViolation(f"momentum density exceeds its envelope by factor {worst:.17g}")
        keep = rng.random(batch) < ratio
        accepted = p[keep]
        take = min(accepted.size, n - filled)
        out[filled : filled + take] = accepted[:take]
        filled += take
    return out


def sample_positions(n: int, stream: SeededStream, params: DoubleSlitParams, t0: float = 0.0) -> np.ndarray:
    """n i.i.d. draws from the position density at time t0, from one stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    return _draw_positions(n, stream.generator(), params, t0)


def sample_momenta(n: int, stream: SeededStream, params: DoubleSlitParams) -> np.ndarray:
    """n i.i.d. draws from the momentum density, from one stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    return _draw_momenta(n, stream.generator(), params)


def make_initial_conditions(
    n: int,
    stream: SeededStream,
    params: DoubleSlitParams,
    t0: float = 0.0,
    theory: str = "revised",
) -> list[InitialCondition]:
    """Initial conditions for n trajectories with per-trajectory substreams.

    Trajectory i draws from ``stream.substream(i)``: first its position,
    then (revised theory only) its momentum.  Under the dbb theory the
    momentum is not a free initial datum -- it is the phase-gradient field
    at the start point, which vanishes identically at t0 = 0.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    if theory not in THEORIES:
        raise ValueError(f"theory must be one of {THEORIES}, got {theory!r}")
    positions = np.empty(n, dtype=float)
    momenta = np.empty(n, dtype=float)
    for i in range(n):
        rng = stream.substream(i).generator()
        positions[i] = _draw_positions(1, rng, params, t0)[0]
        momenta[i] = _draw_momenta(1, rng, params)[0] if theory == "revised" else 0.0
    if theory == "dbb":
        momenta = np.asarray(p_bb(positions, t0, params), dtype=float).reshape(n)
    return [
        InitialCondition(x0=float(positions[i]), p0=float(momenta[i]), t0=t0, theory=theory)
        for i in range(n)
    ]
