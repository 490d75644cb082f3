"""Separation quality metrics and permutation resolution.

The BSS-Eval style decomposition here uses zero-lag projections: the
allowed distortion of a reference image is an instantaneous cross-channel
gain rather than a multi-tap filter.  Values are therefore not comparable
bit-for-bit with the reference BSS-Eval toolkit.
"""
import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError

CLAMP_DB = 60.0
METHOD_NOTE = "zero-lag projection BSS-Eval (no distortion filters)"


def _db(num, den):
    """``10 log10(num / den)`` clamped to +-60 dB; a zero ratio part saturates."""
    if den <= 0:
        return CLAMP_DB if num > 0 else -CLAMP_DB
    if num <= 0:
        return -CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CLAMP_DB, CLAMP_DB))


def si_sdr(est, ref):
    """Scale-invariant SDR in dB, clamped to [-60, 60]."""
    est = np.ravel(np.asarray(est, dtype=np.float64))
    ref = np.ravel(np.asarray(ref, dtype=np.float64))
    if est.shape != ref.shape:
        raise InvalidInputError(f"length mismatch {est.shape} vs {ref.shape}")
    rr = float(np.dot(ref, ref))
    if rr == 0:
        raise InvalidInputError("reference signal is all zeros")
    target = (np.dot(est, ref) / rr) * ref
    noise = est - target
    return _db(float(np.dot(target, target)), float(np.dot(noise, noise)))


def resolve_permutation(est, ref, score=si_sdr):
    """Exhaustive search for the estimate order maximizing total score.

    Returns ``perm`` such that ``est[perm[j]]`` is matched to ``ref[j]``.
    """
    J = len(ref)
    if len(est) != J:
        raise InvalidInputError(f"{len(est)} estimates for {J} references")
    if J > 8:
        raise InvalidInputError("exhaustive permutation search is limited to 8 sources")
    table = np.array([[score(est[i], ref[j]) for i in range(J)] for j in range(J)])
    return best_permutation(table)


def best_permutation(table):
    """``table[j, i]`` = score of estimate ``i`` against reference ``j``."""
    J = table.shape[0]
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(J)):
        val = sum(table[j, perm[j]] for j in range(J))
        if val > best_val:
            best, best_val = perm, val
    return list(best)


def _project(est, basis):
    """Least-squares projection of every column of ``est`` onto span(basis)."""
    G = basis.T @ basis
    coef = np.linalg.solve(G + 1e-12 * np.trace(G) / len(G) * np.eye(len(G)), basis.T @ est)
    return basis @ coef


def decompose(est, refs, j):
    """Zero-lag decomposition of image estimate ``est`` (T, I) for source ``j``.

    Returns ``(s_true, e_spat, e_interf, e_artif)`` each of shape (T, I).
    ``est`` equals ``s_true + e_spat + e_interf + e_artif`` and the last
    three plus ``s_true + e_spat`` are mutually orthogonal.
    """
    J, T, I = refs.shape
    p_target = _project(est, refs[j])
    all_basis = refs.transpose(1, 0, 2).reshape(T, J * I)
    p_all = _project(est, all_basis)
    s_true = refs[j]
    return s_true, p_target - s_true, p_all - p_target, est - p_all


@dataclass
class MetricReport:
    sdr: list
    isr: list
    sir: list
    sar: list
    permutation: list
    method: str = METHOD_NOTE
    extra: dict = field(default_factory=dict)

    def means(self):
        return {k: float(np.mean(getattr(self, k))) for k in ("sdr", "isr", "sir", "sar")}


def bss_eval(est, ref, permute=True):
    """SDR/ISR/SIR/SAR of multichannel image estimates.

    Parameters
    ----------
    est, ref : ndarray, shape (J, T, I) or (J, T)
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.ndim == 2:
        est, ref = est[..., None], ref[..., None]
    if est.shape != ref.shape:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {ref.shape}")
    J = ref.shape[0]
    perm = resolve_permutation(est, ref) if permute else list(range(J))
    out = {"sdr": [], "isr": [], "sir": [], "sar": []}
    for j in range(J):
        s_true, e_spat, e_int, e_art = decompose(est[perm[j]], ref, j)
        e = lambda a: float(np.sum(a * a))
        out["sdr"].append(_db(e(s_true), e(e_spat + e_int + e_art)))
        out["isr"].append(_db(e(s_true), e(e_spat)))
        out["sir"].append(_db(e(s_true + e_spat), e(e_int)))
        out["sar"].append(_db(e(s_true + e_spat + e_int), e(e_art)))
    return MetricReport(permutation=perm, **out)


# -------------------------------------------------------------------- reports

def report_rows(reports, names=None):
    rows = []
    for i, rep in enumerate(reports):
        name = names[i] if names else f"item{i}"
        for j in range(len(rep.sdr)):
            rows.append([name, j, rep.permutation[j], rep.sdr[j], rep.isr[j], rep.sir[j], rep.sar[j]])
    return rows


def write_table(path, reports, names=None, delimiter="\t"):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["item", "source", "estimate", "sdr", "isr", "sir", "sar"])
    for row in report_rows(reports, names):
        w.writerow(row[:3] + [f"{x:.6f}" for x in row[3:]])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def summarize(reports, names=None):
    """Per-item reports plus averages over all items (JSON-ready)."""
    items = [dict(asdict(r), name=(names[i] if names else f"item{i}"))
             for i, r in enumerate(reports)]
    avg = {k: float(np.mean([np.mean(getattr(r, k)) for r in reports]))
           for k in ("sdr", "isr", "sir", "sar")}
    return {"method": METHOD_NOTE, "items": items, "average": avg}


def write_json(path, reports, names=None, extra=None):
    doc = summarize(reports, names)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bar_data(path, averages):
    """Values-only bar chart data: ``{label: {metric: value}}`` as TSV."""
    metrics = ["sdr", "isr", "sir", "sar"]
    with open(path, "w") as fh:
        fh.write("label\t" + "\t".join(metrics) + "\n")
        for label, vals in averages.items():
            fh.write(label + "\t" + "\t".join(f"{vals[m]:.6f}" for m in metrics) + "\n")
