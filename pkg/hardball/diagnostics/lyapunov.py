"""Lyapunov spectra by tangent-frame propagation with periodic QR re-orthonormalization"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from ..core.dynamics import StopCondition, iter_events
from ..core.errors import GrazingImpact, GrazingJacobian, SingularityError, SingularOrbit
from ..core.model import ModelParams, PhasePoint, ToleranceSet
from ..core.product import SinaiBilliard, XYState
from ..core.tangent import event_jacobian
from ..utils.logging import setup_logging

logger = setup_logging()

N_BLOCKS = 10


class LyapunovReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    exponents: List[float]
    confidence: List[float]
    n_events: int
    t_total: float
    reorthonormalization_period: float
    n_blocks: int = N_BLOCKS

    @property
    def total(self) -> float:
        return float(sum(self.exponents))

    @property
    def total_confidence(self) -> float:
        """Half-width for the sum, treating the block errors as independent"""
        return float(np.sqrt(np.sum(np.square(self.confidence))))

    def zero_band(self, width: float = 3.0, floor: float = 0.0) -> List[bool]:
        return [abs(lam) <= max(width * hw, floor) for lam, hw in zip(self.exponents, self.confidence)]

    def zero_count(self, width: float = 3.0, floor: float = 0.0) -> int:
        """Exponents inside the band +-max(width * half-width, floor)"""
        return int(sum(self.zero_band(width, floor)))

    def pairing_defect(self) -> float:
        """max_i |lambda_i + lambda_(m-1-i)| (zero for exactly paired spectra)"""
        lam = np.array(self.exponents)
        return float(np.max(np.abs(lam + lam[::-1]), initial=0.0))


class Benettin:
    """Tangent frame [positions; velocities] with QR every ``period`` time units"""

    def __init__(self, frame: np.ndarray, period: float, t0: float = 0.0):
        if period <= 0:
            raise ValueError(f"re-orthonormalization period must be positive, got {period}")
        self.W = np.array(frame, dtype=float)
        self.period = period
        self.t = t0
        self.last_qr = t0
        self.next_qr = t0 + period
        self.records: List[Tuple[float, np.ndarray]] = []

    def _shear(self, dt: float):
        if dt != 0.0:
            half = self.W.shape[0] // 2
            self.W[:half] += dt * self.W[half:]

    def _qr(self):
        Q, R = linalg.qr(self.W, mode="economic")
        diag = np.diag(R)
        signs = np.where(diag < 0, -1.0, 1.0)
        self.W = Q * signs
        self.records.append((self.t - self.last_qr, np.log(np.abs(diag))))
        self.last_qr = self.t

    def advance_to(self, t: float):
        while self.next_qr <= t:
            self._shear(self.next_qr - self.t)
            self.t = self.next_qr
            self._qr()
            self.next_qr += self.period
        self._shear(t - self.t)
        self.t = t

    def apply(self, J: np.ndarray):
        self.W = J @ self.W

    def finish(self, t_end: float) -> Tuple[np.ndarray, np.ndarray]:
        """Exponents (unsorted) and block-average half-widths"""
        self.advance_to(t_end)
        if self.t > self.last_qr:
            self._qr()
        m = self.W.shape[1]
        if not self.records:
            return np.zeros(m), np.full(m, np.inf)
        spans = np.array([dt for dt, _ in self.records])
        logs = np.array([lg for _, lg in self.records])
        total_time = float(spans.sum())
        if total_time == 0.0:
            return np.zeros(m), np.full(m, np.inf)
        exponents = logs.sum(axis=0) / total_time
        groups = [g for g in np.array_split(np.arange(len(spans)), N_BLOCKS) if g.size and spans[g].sum() > 0]
        if len(groups) < 2:
            return exponents, np.full(m, np.inf)
        blocks = np.array([logs[g].sum(axis=0) / spans[g].sum() for g in groups])
        half_width = blocks.std(axis=0, ddof=1) / np.sqrt(len(groups))
        return exponents, half_width


def _report(exponents: np.ndarray, half_width: np.ndarray, n_events: int, t_total: float,
            period: float) -> LyapunovReport:
    order = np.argsort(exponents)[::-1]
    return LyapunovReport(exponents=exponents[order].tolist(), confidence=half_width[order].tolist(),
                          n_events=n_events, t_total=t_total, reorthonormalization_period=period)


def invariant_frame(x: PhasePoint, params: ModelParams) -> np.ndarray:
    """Orthonormal basis of tangent vectors keeping both reductions and the energy

    Constraints: pi_2(dq1 + dq2) = 0, pi_2(dv1 + dv2) = 0 and <v, dv> = 0;
    the result has 2nu + 2k - 1 columns.
    """
    nu = params.nu
    rows = []
    for j in range(params.k, nu):
        for offset in (0, 2 * nu):
            row = np.zeros(4 * nu)
            row[offset + j] = 1.0
            row[offset + nu + j] = 1.0
            rows.append(row)
    rows.append(np.concatenate([np.zeros(2 * nu), x.v1, x.v2]))
    return linalg.null_space(np.array(rows))


def lyapunov_spectrum(x0: PhasePoint, params: ModelParams, n_events: int, reortho_period: float = 1.0) -> LyapunovReport:
    """Spectrum of the billiard flow on the reduced energy shell

    Raises:
        SingularOrbit: if the run meets a grazing collision or an ambiguous branch
    """
    frame = invariant_frame(x0, params)
    engine = Benettin(frame, reortho_period)
    loop = iter_events(x0, params, StopCondition(n_events=n_events))
    count = 0
    try:
        for event in loop:
            engine.advance_to(event.time)
            engine.apply(event_jacobian(event, params))
            count += 1
    except SingularityError as exc:
        logger.warning(f"Lyapunov run hit a singularity after {count} events: {exc}")
        raise SingularOrbit(f"singular orbit after {count} events: {exc}") from exc

    if count == 0:
        m = frame.shape[1]
        return _report(np.zeros(m), np.full(m, np.inf), 0, loop.time, reortho_period)
    exponents, half_width = engine.finish(loop.time)
    report = _report(exponents, half_width, count, loop.time, reortho_period)
    logger.info(f"Lyapunov spectrum over {count} events (t={loop.time:.6g}): "
                f"top {report.exponents[0]:.4g}, sum {report.total:.3g}")
    return report


def _sinai_exponents(system: SinaiBilliard, position: np.ndarray, velocity: np.ndarray, t_total: float,
                     period: float) -> Tuple[np.ndarray, np.ndarray, int]:
    nu = system.nu
    constraint = np.concatenate([np.zeros(nu), velocity])[None, :]
    engine = Benettin(linalg.null_space(constraint), period)
    count = 0
    for event in system.events(position, velocity):
        if event.time > t_total:
            break
        engine.advance_to(event.time)
        engine.apply(system.jacobian(event.normal, event.velocity_pre))
        count += 1
    exponents, half_width = engine.finish(t_total)
    return exponents, half_width, count


def product_lyapunov_spectrum(z0: XYState, rho: float, t_total: float, reortho_period: float = 1.0,
                              tol: Optional[ToleranceSet] = None) -> LyapunovReport:
    """Spectrum of the product of the x and y Sinai flows at fixed (E1, E2)

    Each factor lives on its own energy shell (2nu - 1 exponents, one of
    them the zero of its flow direction), 4nu - 2 exponents in all.
    """
    nu = z0.x.shape[0]
    pieces = []
    total_events = 0
    try:
        for name, pos, vel in (("x", z0.x, z0.xdot), ("y", z0.y, z0.ydot)):
            if not np.any(vel):
                raise SingularOrbit(f"subsystem {name} is at rest; its energy shell is degenerate")
            system = SinaiBilliard(nu, rho, tol, name=name)
            exponents, half_width, count = _sinai_exponents(system, pos, vel, t_total, reortho_period)
            pieces.append((exponents, half_width))
            total_events += count
    except (GrazingImpact, GrazingJacobian) as exc:
        raise SingularOrbit(f"singular product orbit: {exc}") from exc
    exponents = np.concatenate([p[0] for p in pieces])
    half_width = np.concatenate([p[1] for p in pieces])
    report = _report(exponents, half_width, total_events, t_total, reortho_period)
    logger.info(f"Product spectrum over t={t_total:.6g}: {np.round(report.exponents, 4).tolist()}")
    return report
