"""
Gradient self-checks
Finite differences for every variant, the closed-form projection against an
independent oracle, and strong duality of the projection problem
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

import config
from core.autodiff import cross_entropy_loss, finite_difference_check, mse_loss
from core.gradients import (GradientSet, dual_value, frobenius_inner, optimal_multiplier,
                            projection_oracle, resolve_analytic)
from core.split_model import build_arch, build_model, forward_full, forward_intermediate
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)

# Small enough that central differences over every entry stay fast
CHECK_INPUT_DIM = 6
CHECK_CLASSES = 3
CHECK_FEATURE_DIM_IN = 5
CHECK_FEATURE_DIM_OUT = 4
CHECK_HIDDEN_DIM = 5
CHECK_BATCH = 4

ORACLE_PAIRS = 1000
DUALITY_INSTANCES = 200
MIN_DIM, MAX_DIM = 2, 512


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'value': self.value,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'seconds': self.seconds,
        }


def _local_loss(model, batch):
    inputs, labels = batch
    return cross_entropy_loss(forward_full(model, inputs).logits, labels)


def _in_loss(model, batch):
    s_in, s_out = batch
    return mse_loss(forward_intermediate(model, s_in), s_out)


def check_variant_gradients(variant: str, dtype, seed: int) -> Tuple[float, float]:
    """Worst relative error of the local (cross-entropy) and IN (MSE) gradients"""
    arch = build_arch(variant, (CHECK_INPUT_DIM,), CHECK_CLASSES, kind="mlp",
                      feature_dim_in=CHECK_FEATURE_DIM_IN, feature_dim_out=CHECK_FEATURE_DIM_OUT,
                      hidden_dim=CHECK_HIDDEN_DIM)
    model = build_model(arch, seed, dtype=dtype)
    rng = derive_rng(seed, "gradcheck", ord(variant))
    inputs = rng.standard_normal((CHECK_BATCH, CHECK_INPUT_DIM))
    labels = rng.integers(0, CHECK_CLASSES, CHECK_BATCH)
    s_in = rng.standard_normal((CHECK_BATCH, CHECK_FEATURE_DIM_IN))
    s_out = np.abs(rng.standard_normal((CHECK_BATCH, CHECK_FEATURE_DIM_OUT)))
    local = finite_difference_check(model, _local_loss, (inputs, labels))
    in_error = finite_difference_check(model, _in_loss, (s_in, s_out))
    return local, in_error


def random_gradient_pair(rng: np.random.Generator, b_negative: bool) -> Tuple[GradientSet, GradientSet]:
    """
    G_local spread over all three groups, G_IN on the intermediate group only,
    with the sign of <G_local, G_IN> chosen by b_negative
    """
    dim = int(rng.integers(MIN_DIM, MAX_DIM + 1))
    inner = int(rng.integers(1, dim + 1))
    rest = dim - inner
    ext = int(rng.integers(0, rest + 1))
    sizes = {"extractor": ext, "intermediate": inner, "classifier": rest - ext}

    local = {g: {f"{g}.weight": rng.standard_normal(n)} for g, n in sizes.items()}
    in_arrays = {g: {f"{g}.weight": np.zeros(n)} for g, n in sizes.items()}
    in_arrays["intermediate"]["intermediate.weight"] = rng.standard_normal(inner)
    G_local = GradientSet.from_arrays(local)
    G_IN = GradientSet.from_arrays(in_arrays)
    if (frobenius_inner(G_local, G_IN) < 0) != b_negative:
        G_IN = -G_IN
    return G_IN, G_local


def constraint_scale(Z: GradientSet, G_local: GradientSet) -> float:
    """|Z| |G_local|, the magnitude <Z, G_local> is measured against; 1 when either is zero"""
    scale = Z.norm() * G_local.norm()
    return scale if scale > 0 else 1.0


def check_projection(seed: int, pairs: int = ORACLE_PAIRS) -> Tuple[float, float, float]:
    """
    Worst elementwise gap to the oracle, worst scaled constraint violation,
    and worst scaled slack of the active constraint when b < 0
    """
    rng = derive_rng(seed, "projection-oracle")
    worst_gap = worst_violation = worst_active = 0.0
    for index in range(pairs):
        G_IN, G_local = random_gradient_pair(rng, b_negative=index % 2 == 0)
        Z = resolve_analytic(G_IN, G_local)
        oracle = projection_oracle(G_IN, G_local)
        worst_gap = max(worst_gap, float(np.max(np.abs(Z.vector() - oracle.vector()))))

        scale = constraint_scale(Z, G_local)
        inner = frobenius_inner(Z, G_local)
        worst_violation = max(worst_violation, max(0.0, -inner) / scale)
        if frobenius_inner(G_local, G_IN) < 0:
            worst_active = max(worst_active, abs(inner) / scale)
    return worst_gap, worst_violation, worst_active


def check_strong_duality(seed: int, instances: int = DUALITY_INSTANCES) -> float:
    """Worst relative gap between ||G_IN - Z*||^2 and the dual optimum"""
    rng = derive_rng(seed, "strong-duality")
    worst = 0.0
    for _ in range(instances):
        G_IN, G_local = random_gradient_pair(rng, b_negative=True)
        Z = resolve_analytic(G_IN, G_local)
        residual = G_IN - Z
        primal = frobenius_inner(residual, residual)
        dual = dual_value(optimal_multiplier(G_IN, G_local), G_IN, G_local)
        worst = max(worst, abs(primal - dual) / max(abs(primal), 1e-300))
    return worst


def run_suite(seed: int = config.DEFAULT_SEED) -> List[CheckResult]:
    results: List[CheckResult] = []

    for variant in config.VARIANTS:
        for dtype, tolerance in ((np.float32, config.FD_TOLERANCE_FLOAT32),
                                 (np.float64, config.FD_TOLERANCE_FLOAT64)):
            start = time.perf_counter()
            local, in_error = check_variant_gradients(variant, dtype, seed)
            seconds = time.perf_counter() - start
            precision = np.dtype(dtype).name
            results.append(CheckResult(f"fd-local {variant} {precision}", local, tolerance, seconds))
            results.append(CheckResult(f"fd-in {variant} {precision}", in_error, tolerance, 0.0))

    start = time.perf_counter()
    gap, violation, active = check_projection(seed)
    seconds = time.perf_counter() - start
    results.append(CheckResult("projection vs oracle", gap, config.ORACLE_TOLERANCE, seconds))
    results.append(CheckResult("projection feasibility", violation, config.DUALITY_TOLERANCE, 0.0))
    results.append(CheckResult("active constraint", active, config.DUALITY_TOLERANCE, 0.0))

    start = time.perf_counter()
    duality = check_strong_duality(seed)
    results.append(CheckResult("strong duality", duality, config.DUALITY_TOLERANCE,
                               time.perf_counter() - start))

    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{result.name}: {result.value:.3e} (tolerance {result.tolerance:.0e})")
    return results


def format_results(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>10}  {'tolerance':>9}  {'time':>7}  result"]
    for r in results:
        value = "nan" if math.isnan(r.value) else f"{r.value:.3e}"
        lines.append(f"{r.name:<{width}}  {value:>10}  {r.tolerance:>9.0e}  {r.seconds:>6.2f}s  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
