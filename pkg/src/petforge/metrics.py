"""Verification scoring: cosine scores, EER and minDCF."""
from dataclasses import dataclass

import numpy as np

from .data import Trial, TrialSet
from .errors import InputError, NumericError


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0


def cosine_score(e1, e2):
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise NumericError("cosine score of a zero-norm embedding")
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError("scores and labels must be 1-D and the same length")
    tgt, non = np.sort(scores[labels]), np.sort(scores[~labels])
    if not len(tgt) or not len(non):
        raise InputError("need at least one target and one nontarget trial")
    return scores, tgt, non


def error_rates(scores, labels):
    """Miss / false-alarm rates at every distinct score and at +inf.

    A trial is accepted when its score is >= the threshold.
    """
    scores, tgt, non = _split(scores, labels)
    thresholds = np.append(np.unique(scores), np.inf)
    p_miss = np.searchsorted(tgt, thresholds, side="left") / len(tgt)
    p_fa = 1.0 - np.searchsorted(non, thresholds, side="left") / len(non)
    return thresholds, p_miss, p_fa


def compute_eer(scores, labels):
    """Equal error rate, linearly interpolated between the bracketing ROC points."""
    _, p_miss, p_fa = error_rates(scores, labels)
    diff = p_miss - p_fa
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(p_miss[i])
    m0, m1, f0, f1 = p_miss[i - 1], p_miss[i], p_fa[i - 1], p_fa[i]
    alpha = (f0 - m0) / ((m1 - m0) - (f1 - f0))
    return float(m0 + alpha * (m1 - m0))


def compute_min_dcf(scores, labels, params=DcfParams()):
    """Minimum detection cost over all thresholds, normalized by the best trivial system."""
    _, p_miss, p_fa = error_rates(scores, labels)
    p = params.p_target
    cost = p * params.c_miss * p_miss + (1 - p) * params.c_fa * p_fa
    return float(cost.min() / min(p * params.c_miss, (1 - p) * params.c_fa))


def score_trials(trials, lookup):
    """Cosine-score every trial; ``lookup`` maps utterance id -> embedding."""
    scored = []
    for t in trials:
        try:
            e1, e2 = lookup[t.enroll], lookup[t.test]
        except KeyError as exc:
            raise KeyError(f"no embedding for utterance {exc.args[0]!r}") from None
        scored.append(Trial(t.label, t.enroll, t.test, cosine_score(e1, e2)))
    return TrialSet(scored)


def write_scores(path, trials):
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll} {t.test} {t.score:.6f}\n")


def read_scores(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InputError(f"{path}:{lineno}: expected 'enroll test score'")
            out.append((parts[0], parts[1], float(parts[2])))
    return out


def attach_labels(scores, trials):
    """Join a parsed score file back onto a trial list by (enroll, test)."""
    table = {(e, t): s for e, t, s in scores}
    out = []
    for tr in trials:
        key = (tr.enroll, tr.test)
        if key not in table:
            raise InputError(f"score file has no score for trial {tr.enroll} {tr.test}")
        out.append(Trial(tr.label, tr.enroll, tr.test, table[key]))
    return TrialSet(out)
