"""Grouped Kernel SHAP attribution over keyword and indicator inputs.

Inputs partition into M groups: one per keyword slot (its whole embedding)
and one per indicator (its whole trajectory across the window), so M stays
small enough to report per-word and per-indicator importances. A masked
group is replaced by the matching cells of each background sample and the
model output is averaged over the background, which is the usual Kernel
SHAP conditional-expectation surrogate. The weighted least squares step
eliminates the last column against the efficiency constraint, so
baseline + sum(phi) equals the model output exactly even when the system
needs regularizing. All attributions are expressed in raw index points.

When 2^M fits the evaluation budget every nontrivial coalition is
enumerated and the result is the exact Shapley value; the sampler kicks in
above that, enumerating complete coalition sizes from the outside in and
spreading the leftover budget over the remaining sizes in proportion to
their kernel mass.
"""

from __future__ import annotations

import csv
import html as _html
import itertools
import json
import math
import os
import re
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset import Sample, Scaler
from .errors import ValidationError
from .model import IknetParams, forward_batch, scaler_fingerprint
from .saliency import KeywordSet
from .tensor import Tensor, rng_stream

EFFICIENCY_TOL = 1e-6
EXACT_ENUMERATION_LIMIT = 2**16
_WORDISH_RE = re.compile(r"([A-Za-z0-9']+)")


@dataclass(frozen=True, eq=False)
class FeatureGrouping:
    """Partition of the (n, d) keyword block and (T, f) window into groups.

    Every cell carries the id of the group that owns it; the two id arrays
    must jointly cover ids 0..M-1 with no gaps.
    """

    labels: tuple[str, ...]
    keyword_ids: np.ndarray  # (n, d) group id per embedding cell
    indicator_ids: np.ndarray  # (T, f) group id per window cell

    def __post_init__(self):
        m = len(self.labels)
        if m < 2:
            raise ValidationError("a grouping needs at least 2 groups")
        if len(set(self.labels)) != m:
            raise ValidationError("group labels must be unique")
        seen = np.zeros(m, dtype=bool)
        for ids in (self.keyword_ids, self.indicator_ids):
            if ids.size == 0:
                continue
            if ids.min() < 0 or ids.max() >= m:
                raise ValidationError("group id outside 0..M-1")
            seen[np.unique(ids)] = True
        if not seen.all():
            missing = [self.labels[i] for i in np.nonzero(~seen)[0]]
            raise ValidationError(f"groups with no cells: {missing}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def keyword_slot(self, group: int) -> int | None:
        """Slot index when `group` owns exactly one full keyword row."""
        if (self.indicator_ids == group).any():
            return None
        rows = np.unique(np.nonzero(self.keyword_ids == group)[0])
        if len(rows) != 1:
            return None
        row = int(rows[0])
        if (self.keyword_ids[row] == group).all():
            return row
        return None

    def keyword_slots(self) -> tuple[int | None, ...]:
        return tuple(self.keyword_slot(g) for g in range(self.size))


def standard_grouping(n: int, dim: int, window: int, feature_names) -> FeatureGrouping:
    """One group per keyword slot, one per indicator trajectory."""
    names = list(feature_names)
    labels = [f"keyword_{i + 1:02d}" for i in range(n)] + names
    keyword_ids = np.repeat(np.arange(n), dim).reshape(n, dim)
    indicator_ids = np.tile(np.arange(len(names)) + n, (window, 1))
    return FeatureGrouping(tuple(labels), keyword_ids, indicator_ids)


def per_scalar_grouping(n: int, dim: int, window: int, feature_names) -> FeatureGrouping:
    """Every input scalar its own group; only sensible for tiny configs."""
    names = list(feature_names)
    f = len(names)
    labels = [f"keyword_{i + 1:02d}[{j}]" for i in range(n) for j in range(dim)]
    labels += [f"{name}[t-{window - t}]" for t in range(window) for name in names]
    keyword_ids = np.arange(n * dim).reshape(n, dim)
    indicator_ids = n * dim + np.arange(window * f).reshape(window, f)
    return FeatureGrouping(tuple(labels), keyword_ids, indicator_ids)


def bucketed_grouping(
    n: int, dim: int, window: int, feature_names, buckets: dict[str, list[str]]
) -> FeatureGrouping:
    """Keyword slots as usual, indicators merged into named buckets.

    Buckets must cover every feature name exactly once; this is how M is
    brought under the exact-Shapley ceiling on full-width frames.
    """
    names = list(feature_names)
    column = {name: i for i, name in enumerate(names)}
    labels = [f"keyword_{i + 1:02d}" for i in range(n)] + list(buckets)
    indicator_ids = np.full((window, len(names)), -1, dtype=np.int64)
    assigned = set()
    for b, members in enumerate(buckets.values()):
        for member in members:
            if member not in column:
                raise ValidationError(f"bucket member {member!r} is not a feature")
            if member in assigned:
                raise ValidationError(f"feature {member!r} assigned to two buckets")
            assigned.add(member)
            indicator_ids[:, column[member]] = n + b
    if len(assigned) != len(names):
        raise ValidationError("buckets do not cover every feature")
    keyword_ids = np.repeat(np.arange(n), dim).reshape(n, dim)
    return FeatureGrouping(tuple(labels), keyword_ids, indicator_ids)


@dataclass
class Background:
    """Raw reference inputs the masked groups are drawn from."""

    k: np.ndarray  # (B, n, d)
    x: np.ndarray  # (B, T, f)

    def __post_init__(self):
        if self.k.ndim != 3 or self.x.ndim != 3 or self.k.shape[0] != self.x.shape[0]:
            raise ValidationError("background stacks must be (B, n, d) and (B, T, f)")
        if self.k.shape[0] == 0:
            raise ValidationError("empty background")
        if not (np.isfinite(self.k).all() and np.isfinite(self.x).all()):
            raise ValidationError("non-finite background values")

    def __len__(self) -> int:
        return self.k.shape[0]


def background_from_samples(samples: list[Sample], size: int = 50, seed: int = 0) -> Background:
    """Stack reference samples, subsampling deterministically past `size`."""
    if not samples:
        raise ValidationError("empty background")
    if len(samples) > size:
        idx = rng_stream(seed, "background").choice(len(samples), size, replace=False)
        samples = [samples[i] for i in np.sort(idx)]
    return Background(
        k=np.stack([s.keywords.embeddings for s in samples]),
        x=np.stack([s.x_tech for s in samples]),
    )


@dataclass
class Attribution:
    """Signed per-group contributions to one prediction, in index points."""

    baseline: float
    values: np.ndarray  # (M,)
    prediction: float
    labels: tuple[str, ...]
    keyword_slots: tuple  # per group: covered keyword slot, or None
    words: tuple[str, ...]  # explained sample's word per slot ("" padding)
    date: str
    method: str
    regularized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.labels),):
            raise ValidationError("one phi per group required")
        if len(self.keyword_slots) != len(self.labels):
            raise ValidationError("one slot entry per group required")
        if not (
            np.isfinite(self.values).all()
            and math.isfinite(self.baseline)
            and math.isfinite(self.prediction)
        ):
            raise ValidationError("non-finite attribution")
        gap = abs(self.baseline + float(self.values.sum()) - self.prediction)
        if gap > EFFICIENCY_TOL:
            raise ValidationError(f"efficiency violated by {gap:.3e}")

    def to_dict(self) -> dict:
        return {
            "date": self.date,
            "method": self.method,
            "regularized": self.regularized,
            "baseline": self.baseline,
            "prediction": self.prediction,
            "labels": list(self.labels),
            "phi": self.values.tolist(),
            "words": list(self.words),
        }


def model_value_fn(params: IknetParams, scaler: Scaler):
    """Batched evaluator mapping raw (K, X) stacks to raw price outputs."""
    expected = scaler_fingerprint(scaler, params.dims, params.variant)
    if params.fingerprint and params.fingerprint != expected:
        raise ValidationError(
            "scaler/config fingerprint mismatch: params were trained under a "
            "different fold or scaling"
        )

    def fn(k_stack: np.ndarray, x_stack: np.ndarray) -> np.ndarray:
        scaled = scaler.apply_window(x_stack)
        k_steps = [
            Tensor(np.ascontiguousarray(k_stack[:, i, :]))
            for i in range(k_stack.shape[1])
        ]
        x_steps = [
            Tensor(np.ascontiguousarray(scaled[:, t, :]))
            for t in range(x_stack.shape[1])
        ]
        out = forward_batch(params, k_steps, x_steps, training=False)
        return scaler.invert_target(out.data[:, 0])

    return fn


def _coalition_values(
    z, sample_k, sample_x, background, grouping, fn, max_rows=2048
) -> np.ndarray:
    """E over background of f(sample with off groups replaced), per row of z."""
    n_rows = z.shape[0]
    b = len(background)
    per = max(1, max_rows // b)
    values = np.empty(n_rows)
    for start in range(0, n_rows, per):
        chunk = z[start : start + per]
        on_k = chunk[:, grouping.keyword_ids]  # (c, n, d)
        on_x = chunk[:, grouping.indicator_ids]  # (c, T, f)
        k = np.where(on_k[:, None], sample_k[None, None], background.k[None])
        x = np.where(on_x[:, None], sample_x[None, None], background.x[None])
        out = fn(k.reshape(-1, *sample_k.shape), x.reshape(-1, *sample_x.shape))
        values[start : start + per] = out.reshape(len(chunk), b).mean(axis=1)
    return values


def _kernel_weight(m: int, s: int) -> float:
    return (m - 1) / (math.comb(m, s) * s * (m - s))


def _exact_coalitions(m: int):
    codes = np.arange(1, (1 << m) - 1, dtype=np.uint64)
    z = (codes[:, None] >> np.arange(m, dtype=np.uint64)) & 1
    z = z.astype(bool)
    sizes = z.sum(axis=1)
    by_size = np.array([0.0] + [_kernel_weight(m, s) for s in range(1, m)])
    return z, by_size[sizes]


def _sampled_coalitions(m: int, budget: int, rng):
    """Coalition rows and weights under the Shapley kernel, within budget.

    Mirrored sizes (s, m-s) are handled together: fully enumerated from the
    outside in while they fit, then sampled antithetically, each draw
    emitting a coalition and its complement so the design stays balanced.
    A level's kernel mass is split evenly over the rows that represent it.
    """
    pairs = [(s,) if s == m - s else (s, m - s) for s in range(1, m // 2 + 1)]
    rows, weights = [], []
    remaining = budget
    leftover = []
    for pair in pairs:
        count = sum(math.comb(m, s) for s in pair)
        if count <= remaining:
            for s in pair:
                w = _kernel_weight(m, s)
                for combo in itertools.combinations(range(m), s):
                    row = np.zeros(m, dtype=bool)
                    row[list(combo)] = True
                    rows.append(row)
                    weights.append(w)
            remaining -= count
        else:
            leftover.append(pair)
    if leftover and remaining > 0:
        masses = np.array(
            [sum(_kernel_weight(m, s) * math.comb(m, s) for s in pair) for pair in leftover]
        )
        probs = masses / masses.sum()
        costs = [len(pair) for pair in leftover]
        draws = [0] * len(leftover)
        while remaining >= min(costs):
            pick = int(rng.choice(len(leftover), p=probs))
            if costs[pick] > remaining:
                continue
            draws[pick] += 1
            remaining -= costs[pick]
        for pair, times in zip(leftover, draws):
            if times == 0:
                continue
            shares = [
                _kernel_weight(m, s) * math.comb(m, s) / times for s in pair
            ]
            for _ in range(times):
                row = np.zeros(m, dtype=bool)
                row[rng.choice(m, size=pair[0], replace=False)] = True
                rows.append(row)
                weights.append(shares[0])
                if len(pair) == 2:
                    rows.append(~row)
                    weights.append(shares[1])
    return np.array(rows), np.array(weights)


def _solve_constrained(z, weights, values, baseline, full_value):
    """WLS fit of the linear surrogate with efficiency eliminated exactly.

    The last group's phi is substituted out against the constraint, so the
    returned values always sum to full_value - baseline, regularized or not.
    """
    m = z.shape[1]
    total = full_value - baseline
    zf = z.astype(np.float64)
    design = zf[:, :-1] - zf[:, -1:]
    y = values - baseline - zf[:, -1] * total
    gram = (design * weights[:, None]).T @ design
    rhs = design.T @ (weights * y)
    regularized = False
    if np.linalg.matrix_rank(gram) < m - 1:
        warnings.warn(
            "singular Kernel SHAP system; solving with ridge regularization",
            RuntimeWarning,
        )
        regularized = True
        gram = gram + 1e-10 * np.eye(m - 1)
    head = np.linalg.solve(gram, rhs)
    return np.append(head, total - head.sum()), regularized


def _explained_arrays(sample: Sample, grouping: FeatureGrouping, background: Background):
    sample_k = sample.keywords.embeddings
    sample_x = sample.x_tech
    if sample_k.shape != grouping.keyword_ids.shape:
        raise ValidationError("keyword block does not match grouping shape")
    if sample_x.shape != grouping.indicator_ids.shape:
        raise ValidationError("window does not match grouping shape")
    if background.k.shape[1:] != sample_k.shape or background.x.shape[1:] != sample_x.shape:
        raise ValidationError("background shapes do not match the explained sample")
    return sample_k, sample_x


def kernel_shap(
    sample: Sample,
    params: IknetParams | None,
    scaler: Scaler | None,
    grouping: FeatureGrouping,
    background: Background,
    n_coalitions: int = 2048,
    seed: int = 0,
    sampler: str = "auto",
    model_fn=None,
) -> Attribution:
    """Kernel SHAP attribution for one sample.

    sampler: "exact" enumerates every nontrivial coalition, "sampled" draws
    n_coalitions under the Shapley kernel, "auto" picks exact while 2^M
    stays within the enumeration limit. model_fn overrides the params and
    scaler pair, for callers explaining a custom function.
    """
    fn = model_fn if model_fn is not None else model_value_fn(params, scaler)
    sample_k, sample_x = _explained_arrays(sample, grouping, background)
    m = grouping.size
    if sampler not in ("auto", "exact", "sampled"):
        raise ValidationError(f"unknown sampler {sampler!r}")
    if sampler == "auto":
        sampler = "exact" if 2**m <= EXACT_ENUMERATION_LIMIT else "sampled"
    if sampler == "exact":
        if 2**m > EXACT_ENUMERATION_LIMIT:
            raise ValidationError(f"2^{m} coalitions exceed the enumeration limit")
        z, weights = _exact_coalitions(m)
    else:
        if n_coalitions < m + 2:
            raise ValidationError(f"need at least M+2={m + 2} coalitions, got {n_coalitions}")
        z, weights = _sampled_coalitions(m, n_coalitions, rng_stream(seed, "shap"))
    baseline = float(fn(background.k, background.x).mean())
    full_value = float(fn(sample_k[None], sample_x[None])[0])
    values = _coalition_values(z, sample_k, sample_x, background, grouping, fn)
    phi, regularized = _solve_constrained(z, weights, values, baseline, full_value)
    return Attribution(
        baseline=baseline,
        values=phi,
        prediction=full_value,
        labels=grouping.labels,
        keyword_slots=grouping.keyword_slots(),
        words=tuple(sample.keywords.words),
        date=sample.target_date,
        method=f"kernel-{sampler}",
        regularized=regularized,
    )


def exact_shapley(
    sample: Sample,
    params: IknetParams | None,
    scaler: Scaler | None,
    grouping: FeatureGrouping,
    background: Background,
    model_fn=None,
) -> Attribution:
    """Direct Shapley sum over all 2^M coalitions; the Kernel SHAP oracle."""
    fn = model_fn if model_fn is not None else model_value_fn(params, scaler)
    sample_k, sample_x = _explained_arrays(sample, grouping, background)
    m = grouping.size
    if m > 16:
        raise ValidationError(f"exact Shapley limited to M <= 16, got {m}")
    total = 1 << m
    codes = np.arange(total, dtype=np.uint64)
    z = ((codes[:, None] >> np.arange(m, dtype=np.uint64)) & 1).astype(bool)
    values = _coalition_values(z, sample_k, sample_x, background, grouping, fn)
    sizes = z.sum(axis=1).astype(np.int64)
    fact = [math.factorial(s) for s in range(m + 1)]
    weight_by_size = np.array(
        [fact[s] * fact[m - 1 - s] / fact[m] for s in range(m)]
    )
    phi = np.zeros(m)
    for i in range(m):
        without = ~z[:, i]
        base_codes = codes[without]
        with_codes = base_codes | np.uint64(1 << i)
        gains = values[with_codes.astype(np.int64)] - values[base_codes.astype(np.int64)]
        phi[i] = float((weight_by_size[sizes[without]] * gains).sum())
    return Attribution(
        baseline=float(values[0]),
        values=phi,
        prediction=float(values[-1]),
        labels=grouping.labels,
        keyword_slots=grouping.keyword_slots(),
        words=tuple(sample.keywords.words),
        date=sample.target_date,
        method="exact-shapley",
    )


def global_importance(attributions: list[Attribution]) -> list[tuple[str, float]]:
    """Mean |phi| per group across attributions, ranked descending.

    Keyword groups are relabeled with their modal word over the period;
    ties in the mean break lexicographically by label.
    """
    if not attributions:
        raise ValidationError("need at least one attribution")
    first = attributions[0]
    for a in attributions[1:]:
        if a.labels != first.labels or a.keyword_slots != first.keyword_slots:
            raise ValidationError("attributions come from different groupings")
    means = np.mean([np.abs(a.values) for a in attributions], axis=0)
    labels = []
    for g, label in enumerate(first.labels):
        slot = first.keyword_slots[g]
        if slot is not None:
            words = [a.words[slot] for a in attributions if a.words[slot]]
            if words:
                counts = Counter(words)
                modal = sorted(counts, key=lambda w: (-counts[w], w))[0]
                label = f"{label} ({modal})"
        labels.append(label)
    order = sorted(range(len(labels)), key=lambda g: (-means[g], labels[g]))
    return [(labels[g], float(means[g])) for g in order]


def write_importance_csv(path, ranking: list[tuple[str, float]]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "mean_abs_phi"])
        for label, value in ranking:
            writer.writerow([label, repr(float(value))])
    os.replace(tmp, path)


def render_text_attribution(
    text: str, keywords: KeywordSet, attribution: Attribution
) -> tuple[dict, str]:
    """Annotate an article with per-word attributions.

    Returns the JSON payload (word, phi, sign, rank, presence) and a
    self-contained HTML page coloring matched words by sign with intensity
    |phi| / max |phi|. Words absent from the text appear in the legend only.
    """
    if list(keywords.words) != list(attribution.words):
        raise ValidationError("keyword set does not match the attribution's words")
    slot_to_group = {
        slot: g for g, slot in enumerate(attribution.keyword_slots) if slot is not None
    }
    present_tokens = {
        part.lower() for part in _WORDISH_RE.findall(text)
    }
    entries = []
    for slot in sorted(slot_to_group):
        word = attribution.words[slot] if slot < len(attribution.words) else ""
        if not word:
            continue
        phi = float(attribution.values[slot_to_group[slot]])
        entries.append(
            {
                "word": word,
                "phi": phi,
                "sign": "up" if phi > 0 else ("down" if phi < 0 else "flat"),
                "in_text": word.lower() in present_tokens,
            }
        )
    ranked = sorted(range(len(entries)), key=lambda i: (-abs(entries[i]["phi"]), entries[i]["word"]))
    for rank, i in enumerate(ranked, start=1):
        entries[i]["rank"] = rank
    peak = max((abs(e["phi"]) for e in entries), default=0.0)
    for e in entries:
        e["intensity"] = abs(e["phi"]) / peak if peak > 0 else 0.0
    payload = {
        "date": attribution.date,
        "method": attribution.method,
        "baseline": attribution.baseline,
        "prediction": attribution.prediction,
        "groups": [
            {"label": label, "phi": float(attribution.values[i])}
            for i, label in enumerate(attribution.labels)
        ],
        "entries": entries,
    }
    return payload, _attribution_html(text, payload)


def _entry_style(entry) -> str:
    if entry["sign"] == "flat" or entry["intensity"] == 0.0:
        return "background: rgba(120, 120, 120, 0.15)"
    channel = "46, 125, 50" if entry["sign"] == "up" else "183, 28, 28"
    return f"background: rgba({channel}, {0.15 + 0.6 * entry['intensity']:.3f})"


def _attribution_html(text: str, payload: dict) -> str:
    by_word = {e["word"].lower(): e for e in payload["entries"]}
    pieces = []
    for part in _WORDISH_RE.split(text):
        escaped = _html.escape(part)
        entry = by_word.get(part.lower())
        if entry is not None:
            pieces.append(f'<span style="{_entry_style(entry)}">{escaped}</span>')
        else:
            pieces.append(escaped)
    rows = []
    for e in sorted(payload["entries"], key=lambda e: e["rank"]):
        note = "" if e["in_text"] else " (not in text)"
        rows.append(
            f'<li><span style="{_entry_style(e)}">{_html.escape(e["word"])}</span> '
            f"phi={e['phi']:+.4f} rank={e['rank']}{note}</li>"
        )
    bars = []
    width = 360
    for i, e in enumerate(sorted(payload["entries"], key=lambda e: e["rank"])):
        bar_w = max(1.0, width * e["intensity"])
        color = "#2e7d32" if e["sign"] == "up" else ("#b71c1c" if e["sign"] == "down" else "#9e9e9e")
        y = 8 + i * 22
        bars.append(
            f'<rect x="0" y="{y}" width="{bar_w:.1f}" height="14" fill="{color}"></rect>'
            f'<text x="{bar_w + 6:.1f}" y="{y + 11}" font-size="12">'
            f"{_html.escape(e['word'])} {e['phi']:+.4f}</text>"
        )
    svg_height = 16 + 22 * len(payload["entries"])
    return (
        "<!doctype html><html><head><meta charset='utf-8'>"
        "<title>keyword attribution</title></head><body>"
        f"<h1>Attribution for {_html.escape(payload['date'])}</h1>"
        f"<p>baseline {payload['baseline']:.2f} &rarr; prediction "
        f"{payload['prediction']:.2f} ({_html.escape(payload['method'])})</p>"
        f"<p style='max-width: 60em; line-height: 1.6'>{''.join(pieces)}</p>"
        f"<h2>Keywords</h2><ul>{''.join(rows)}</ul>"
        f'<svg width="{width + 200}" height="{svg_height}">{"".join(bars)}</svg>'
        "</body></html>"
    )


def write_attribution_report(directory, stem: str, payload: dict, html_page: str) -> None:
    """attribution JSON plus the HTML page, named <stem>.json / <stem>.html."""
    os.makedirs(directory, exist_ok=True)
    json_path = os.path.join(directory, f"{stem}.json")
    tmp = f"{json_path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, json_path)
    html_path = os.path.join(directory, f"{stem}.html")
    tmp = f"{html_path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(html_page)
    os.replace(tmp, html_path)
