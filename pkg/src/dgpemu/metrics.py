"""Emulator scores: MSPE, Nash-Sutcliffe efficiency and interval coverage."""
import numpy as np

from dgpemu.errors import DomainError


def _pair(a, b, names=("pred", "truth")):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {names[0]}={a.size}, {names[1]}={b.size}")
    if a.size == 0:
        raise DomainError("need at least one point")
    return a, b


def mspe(pred_mean, truth):
    """Mean squared prediction error."""
    p, t = _pair(pred_mean, truth)
    return float(np.mean((p - t) ** 2))


def nse(pred_mean, truth):
    """1 - MSPE / Var(truth), with the population (1/p) variance."""
    p, t = _pair(pred_mean, truth)
    v = float(np.var(t))
    if v == 0:
        raise DomainError("truth is constant; NSE is undefined")
    return 1.0 - mspe(p, t) / v


def coverage(lower, upper, truth):
    """Fraction of truths inside their interval, endpoints included."""
    lo, t = _pair(lower, truth, ("lower", "truth"))
    hi, _ = _pair(upper, truth, ("upper", "truth"))
    return float(np.mean((lo <= t) & (t <= hi)))


def report(pred_mean, lower, upper, truth):
    """Dict of every score, keyed by name."""
    return {
        "n": int(np.asarray(truth).size),
        "mspe": mspe(pred_mean, truth),
        "nse": nse(pred_mean, truth),
        "coverage": coverage(lower, upper, truth),
    }


def format_report(scores):
    return "".join(f"{k}={v:.17g}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in scores.items())


def write_metrics_csv(path, scores):
    keys = list(scores)
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(f"{scores[k]:.17g}" if isinstance(scores[k], float) else str(scores[k])
                          for k in keys) + "\n")
