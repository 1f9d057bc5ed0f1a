"""
Central finite-difference gradient oracle and the check suites behind
`manage.py gradcheck`.

Scopes:
    ops      every differentiable primitive of the tensor engine
    modules  encoder, decoder, CAM, ConvLSTM, RCM (pairwise and group), CRM, losses
    full     a whole network at 16x16 with a 2-stage encoder
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np
import pandas as pd

from . import settings
from .convlstm import ConvLSTMParams, ConvLSTMState, cell_step, init_state
from .crm import CRMConfig, LevelParams, forward_full, refine
from .layers import CAMParams, DecoderParams, EncoderConfig, EncoderParams, cam_fuse, decode, encode
from .loss import cross_entropy, lovasz_softmax
from .model import CycleSegNet
from .rcm import RCMParams, rcm_forward, rcm_group_forward, region_bank
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    average,
    concat,
    conv2d,
    elementwise,
    flatten_map,
    log_softmax_rows,
    matmul,
    mul,
    pool,
    reshape,
    scale,
    softmax_rows,
    total,
    transpose,
    unflatten_map,
    upsample_bilinear,
)

logger = logging.getLogger(__name__)

SCOPES = ("ops", "modules", "full")
NORM_FLOOR = 1e-8


@dataclass
class CheckResult:
    component: str
    scope: str
    worst_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst_rel_err < self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale_ = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale_)


def numeric_gradient(fn: Callable[[], Tensor], param: Parameter, indices: np.ndarray, h: float) -> np.ndarray:
    """Central differences of fn() w.r.t. selected flat entries of param."""
    original = param.numpy()
    out = np.empty(len(indices))
    for n, idx in enumerate(indices):
        bumped = original.copy().reshape(-1)
        bumped[idx] += h
        param.assign(bumped.reshape(original.shape))
        plus = fn().item()
        bumped[idx] -= 2 * h
        param.assign(bumped.reshape(original.shape))
        minus = fn().item()
        out[n] = (plus - minus) / (2 * h)
    param.assign(original)
    return out


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Parameter], h: float,
                    max_entries: int = 16, seed: int = 0) -> float:
    """Worst per-parameter relative error between tape and finite differences.

    Each parameter is checked on at most max_entries sampled entries.
    """
    with Tape() as tape:
        tape.watch(*params)
        loss = fn()
    grads = tape.backward(loss).for_params(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(params, grads):
        count = min(max_entries, param.size)
        indices = np.sort(rng.choice(param.size, size=count, replace=False))
        numeric = numeric_gradient(fn, param, indices, h)
        worst = max(worst, relative_error(grad.reshape(-1)[indices], numeric))
    return worst


def _readout(shape, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Fixed random linear functional, so every output entry matters."""
    weights = Tensor(rng.normal(size=shape))
    return lambda t: total(mul(t, weights))


def _param(rng: np.random.Generator, *shape, away_from_zero: bool = False) -> Parameter:
    values = rng.normal(size=shape)
    if away_from_zero:
        values = np.sign(values) * rng.uniform(0.1, 1.0, size=shape)
    return Parameter(values)


# ============================================================================
# Suites
# ============================================================================
def _ops_cases(rng: np.random.Generator):
    a = _param(rng, 1, 2, 3, 3)
    b = _param(rng, 1, 2, 3, 3)
    kinked = _param(rng, 1, 2, 3, 3, away_from_zero=True)
    bias = _param(rng, 2)
    m1, m2 = _param(rng, 3, 4), _param(rng, 4, 2)
    x = _param(rng, 1, 2, 5, 5)
    kernel, kbias = _param(rng, 3, 2, 3, 3), _param(rng, 3)
    distinct = Parameter(rng.permutation(50).reshape(1, 2, 5, 5) * 0.1)
    small = _param(rng, 1, 2, 2, 3)

    cases = []

    def case(name, fn_of, params):
        readout = _readout(fn_of().shape, rng)
        cases.append((name, lambda: readout(fn_of()), params))

    for kind in ("add", "sub", "mul"):
        case(kind, lambda kind=kind: elementwise(kind, a, b), [a, b])
    case("add_bias", lambda: elementwise("add", a, bias), [a, bias])
    for kind in ("sigmoid", "tanh"):
        case(kind, lambda kind=kind: elementwise(kind, a), [a])
    case("relu", lambda: elementwise("relu", kinked), [kinked])
    case("scale", lambda: scale(a, -1.7), [a])
    case("average", lambda: average([a, b]), [a, b])
    case("matmul", lambda: matmul(m1, m2), [m1, m2])
    case("softmax_rows", lambda: softmax_rows(m1), [m1])
    case("log_softmax_rows", lambda: log_softmax_rows(m1), [m1])
    case("reshape", lambda: reshape(a, (2, 9)), [a])
    case("transpose", lambda: transpose(m1, (1, 0)), [m1])
    case("concat", lambda: concat([a, b], axis=1), [a, b])
    case("flatten_map", lambda: unflatten_map(flatten_map(a), 3, 3), [a])
    case("conv2d", lambda: conv2d(x, kernel, kbias, stride=1, padding=1), [x, kernel, kbias])
    case("conv2d_stride2", lambda: conv2d(x, kernel, kbias, stride=2, padding=1), [x, kernel, kbias])
    case("roi_avg", lambda: pool("roi_avg", x, 2, 2), [x])
    case("roi_max", lambda: pool("roi_max", distinct, 2, 2), [distinct])
    case("upsample_bilinear", lambda: upsample_bilinear(small, 5, 7), [small])
    case("total", lambda: total(a), [a])
    return cases


def _module_cases(rng: np.random.Generator):
    cases = []
    channels = 4
    state_shape = (1, channels, 4, 4)

    enc_cfg = EncoderConfig(channels=(3, 4), in_channels=3)
    enc = EncoderParams.init(enc_cfg, rng)
    image = Tensor(rng.uniform(size=(1, 3, 16, 16)))
    enc_out = _readout((1, 4, 4, 4), rng)
    cases.append(("encoder", lambda: enc_out(encode(image, enc_cfg, enc).deepest), enc.parameters()))

    dec = DecoderParams.init(enc_cfg, 2, rng, zero_head=False)
    deep, shallow = _param(rng, 1, 4, 4, 4), _param(rng, 1, 3, 8, 8)
    dec_out = _readout((1, 2, 16, 16), rng)
    cases.append(("decoder", lambda: dec_out(decode(deep, [shallow], dec)), dec.parameters() + [deep, shallow]))

    cam = CAMParams.init(rng, channels)
    f1, f2 = _param(rng, *state_shape), _param(rng, *state_shape)
    cam_out = _readout(state_shape, rng)
    cases.append(("cam_fuse", lambda: cam_out(cam_fuse(f1, f2, cam)), cam.parameters() + [f1, f2]))

    lstm = ConvLSTMParams.init(rng, 3, channels)
    x0 = _param(rng, *state_shape)
    h0, c0 = Tensor(rng.normal(size=state_shape)), Tensor(rng.normal(size=state_shape))
    lstm_out = _readout(state_shape, rng)

    def three_steps() -> Tensor:
        state = ConvLSTMState(h0, c0)
        for _ in range(3):
            state = cell_step(x0, state, lstm)
        return lstm_out(state.hidden)

    lstm_params = [p for name, p in lstm.named_parameters() if not name.startswith("projection")]
    cases.append(("convlstm_3_steps", three_steps, lstm_params + [x0]))

    feature = _param(rng, 1, 3, 4, 4)
    cases.append(("init_state", lambda: lstm_out(init_state(feature, lstm).cell),
                  lstm.projection.parameters() + [feature]))

    rcm = RCMParams.init(rng, channels)
    target, src_b, src_c = (_param(rng, *state_shape) for _ in range(3))
    rcm_out = _readout(state_shape, rng)
    rcm_params = [p for name, p in rcm.named_parameters() if not name.startswith("cat")]
    cases.append(("rcm_forward", lambda: rcm_out(rcm_forward(target, region_bank([src_b], rcm), [src_b], rcm)),
                  rcm_params + [target, src_b]))
    cases.append(("rcm_group_k3", lambda: rcm_out(rcm_group_forward(0, [target, src_b, src_c], rcm)),
                  rcm_params + [target, src_b, src_c]))

    level = LevelParams.init(rng, channels)
    crm_cfg = CRMConfig(steps=3)
    feats = [Tensor(rng.normal(size=state_shape)) for _ in range(2)]
    crm_out = _readout(state_shape, rng)

    def crm_readout() -> Tensor:
        result = refine([init_state(f, level.lstm) for f in feats], crm_cfg, level)
        return crm_out(result.states[0].hidden)

    cases.append(("crm_n3", crm_readout, level.parameters()))

    logits = _param(rng, 1, 2, 4, 4)
    mask = (rng.uniform(size=(4, 4)) > 0.5).astype(np.uint8)
    mask[0, 0], mask[0, 1] = 0, 1
    cases.append(("lovasz_softmax", lambda: lovasz_softmax(logits, mask), [logits]))
    cases.append(("cross_entropy", lambda: cross_entropy(logits, mask), [logits]))
    return cases


def _full_cases(rng: np.random.Generator, seed: int):
    enc_cfg = EncoderConfig(channels=(4, 6), in_channels=3)
    model = CycleSegNet.init(enc_cfg, levels=2, seed=seed, zero_head=False)
    cfg = CRMConfig(steps=2)
    images = [Tensor(rng.uniform(size=(1, 3, 16, 16))) for _ in range(2)]
    masks = [(rng.uniform(size=(16, 16)) > 0.5).astype(np.uint8) for _ in range(2)]

    def loss() -> Tensor:
        result = forward_full(images, model, cfg)
        return average([cross_entropy(lg, m) for lg, m in zip(result.logits, masks)])

    return [("cycleseg_net", loss, model.parameters())]


def run_suite(scope: str, seed: int = 0, max_entries: int = 16) -> List[CheckResult]:
    """Run one scope and return the worst relative error per component."""
    if scope not in SCOPES:
        raise ValueError(f"Unknown gradcheck scope {scope!r}; expected one of {SCOPES}")
    rng = np.random.default_rng(seed)
    if scope == "ops":
        cases = _ops_cases(rng)
        h, tol = settings.GRADCHECK_STEP_PRIMITIVE, settings.GRADCHECK_TOL_PRIMITIVE
    elif scope == "modules":
        cases = _module_cases(rng)
        h, tol = settings.GRADCHECK_STEP_COMPOSED, settings.GRADCHECK_TOL_COMPOSED
    else:
        cases = _full_cases(rng, seed)
        h, tol = settings.GRADCHECK_STEP_COMPOSED, settings.GRADCHECK_TOL_COMPOSED
        max_entries = min(max_entries, 6)

    results = []
    for name, fn, params in cases:
        worst = check_gradients(fn, params, h, max_entries=max_entries, seed=seed)
        result = CheckResult(name, scope, worst, tol)
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, f"[GradCheck] {scope}/{name}: worst relative error {worst:.3e} (tol {tol:.0e})")
        results.append(result)
    return results


def report_frame(results: Sequence[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([
        {
            "component": r.component,
            "scope": r.scope,
            "worst_rel_err": r.worst_rel_err,
            "tolerance": r.tolerance,
            "passed": r.passed,
        }
        for r in results
    ])
