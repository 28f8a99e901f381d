"""Quantitative comparison of learned and ground-truth pullback geometries.

Two metrics, both averaged over endpoint pairs and a uniform t-grid:

* geodesic error: mean Euclidean gap between the learned geodesic and the
  ground-truth geodesic through the same endpoints;
* variation error: mean Euclidean gap between the geodesic to an endpoint
  and the geodesic to a Gaussian perturbation of that endpoint, measuring
  sensitivity of the geodesic computation.

Endpoint pairs are drawn without replacement from a held-out split.  The
report records every configuration value used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FlowgeomError

REPORT_SCHEMA = "pullback-eval/1"


@dataclass
class PairwiseErrors:
    mean: float
    std: float
    per_pair: np.ndarray
    n_failed: int = 0


def split_train_test(x, test_fraction: float = 0.2, seed: int = 0):
    """Seeded shuffle split; returns (train, test)."""
    x = np.asarray(x, dtype=np.float64)
    n_test = int(round(x.shape[0] * test_fraction))
    perm = np.random.default_rng(seed).permutation(x.shape[0])
    return x[perm[n_test:]], x[perm[:n_test]]


def sample_pairs(x, n_pairs: int, seed: int = 0) -> np.ndarray:
    """(n_pairs, 2, d) endpoint pairs drawn uniformly without replacement."""
    x = np.asarray(x, dtype=np.float64)
    if 2 * n_pairs > x.shape[0]:
        raise ValueError(
            f"{n_pairs} pairs need {2 * n_pairs} distinct points, "
            f"only {x.shape[0]} available"
        )
    idx = np.random.default_rng(seed).choice(x.shape[0], size=2 * n_pairs,
                                             replace=False)
    return x[idx].reshape(n_pairs, 2, x.shape[1])


def default_perturbation_scale(x, scale: float = 0.05) -> np.ndarray:
    """Per-coordinate perturbation deviations: scale * data standard deviation."""
    return scale * np.asarray(x, dtype=np.float64).std(axis=0)


def _mean_curve_gap(curve_a: np.ndarray, curve_b: np.ndarray) -> float:
    return float(np.linalg.norm(curve_a - curve_b, axis=-1).mean())


def _aggregate(per_pair: list[float], n_failed: int) -> PairwiseErrors:
    arr = np.asarray(per_pair, dtype=np.float64)
    if arr.size == 0:
        return PairwiseErrors(mean=float("nan"), std=float("nan"),
                              per_pair=arr, n_failed=n_failed)
    return PairwiseErrors(mean=float(arr.mean()), std=float(arr.std()),
                          per_pair=arr, n_failed=n_failed)


def geodesic_error(learned, truth, pairs, t_steps: int = 100) -> PairwiseErrors:
    """Mean per-pair gap between learned and ground-truth geodesics.

    Pairs whose learned curve overflows the flow are excluded and counted.
    """
    per_pair: list[float] = []
    n_failed = 0
    for x0, x1 in np.asarray(pairs, dtype=np.float64):
        try:
            learned_curve = learned.geodesic_curve(x0, x1, t_steps)
            truth_curve = truth.geodesic_curve(x0, x1, t_steps)
        except FlowgeomError:
            n_failed += 1
            continue
        per_pair.append(_mean_curve_gap(learned_curve, truth_curve))
    return _aggregate(per_pair, n_failed)


def variation_error(manifold, pairs, sigma, t_steps: int = 100,
                    seed: int = 0) -> PairwiseErrors:
    """Mean geodesic displacement when the far endpoint is perturbed.

    ``sigma`` is a scalar or per-coordinate vector of Gaussian deviations.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    deltas = rng.normal(size=pairs[:, 1, :].shape) * np.asarray(sigma)
    per_pair: list[float] = []
    n_failed = 0
    for (x0, x1), dx in zip(pairs, deltas):
        try:
            base = manifold.geodesic_curve(x0, x1, t_steps)
            moved = manifold.geodesic_curve(x0, x1 + dx, t_steps)
        except FlowgeomError:
            n_failed += 1
            continue
        per_pair.append(_mean_curve_gap(base, moved))
    return _aggregate(per_pair, n_failed)


@dataclass
class TableEntry:
    """One trained model to be scored: (dataset, variant, seed, manifold)."""

    dataset: str
    variant: str
    seed: int
    manifold: object | None


@dataclass
class EvalReport:
    """Per-dataset, per-variant aggregated metrics plus full configuration."""

    config: dict
    cells: list[dict] = field(default_factory=list)
    entries: list[dict] = field(default_factory=list)

    def cell(self, dataset: str, variant: str) -> dict | None:
        for c in self.cells:
            if c["dataset"] == dataset and c["variant"] == variant:
                return c
        return None

    def to_text(self) -> str:
        lines = [f"schema: {REPORT_SCHEMA}", "config:"]
        for key in sorted(self.config):
            lines.append(f"  {key}: {self.config[key]}")
        lines.append("cells:")
        for c in self.cells:
            if c.get("error"):
                lines.append(
                    f"  dataset={c['dataset']} variant={c['variant']} "
                    f"error={c['error']}"
                )
                continue
            lines.append(
                "  dataset={dataset} variant={variant} seeds={seeds} "
                "geodesic_mean={geodesic_mean:.6g} geodesic_std={geodesic_std:.6g} "
                "variation_mean={variation_mean:.6g} "
                "variation_std={variation_std:.6g} n_failed={n_failed}".format(**c)
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["dataset,variant,seeds,metric,mean,std,n_failed,error"]
        for c in self.cells:
            seeds = ";".join(str(s) for s in c.get("seeds", []))
            if c.get("error"):
                lines.append(
                    f"{c['dataset']},{c['variant']},{seeds},,,,,{c['error']}"
                )
                continue
            for metric in ("geodesic", "variation"):
                lines.append(
                    f"{c['dataset']},{c['variant']},{seeds},{metric},"
                    f"{c[metric + '_mean']:.17g},{c[metric + '_std']:.17g},"
                    f"{c['n_failed']},"
                )
        return "\n".join(lines) + "\n"


def run_table(entries, truths, data, n_pairs: int = 100, t_steps: int = 100,
              sigma_scale: float = 0.05, seed: int = 0) -> EvalReport:
    """Score every entry against its dataset's ground truth.

    ``entries`` lists :class:`TableEntry` items (several seeds per cell are
    pooled); ``truths`` maps dataset name to the ground-truth manifold;
    ``data`` maps dataset name to its sample matrix, from which a held-out
    split provides the endpoint pairs (shared across variants so columns are
    comparable).  Entries with a missing manifold produce an error cell.
    """
    entries = list(entries)
    datasets = sorted({e.dataset for e in entries})
    pair_sets, sigmas = {}, {}
    for name in datasets:
        _, test = split_train_test(data[name], seed=seed)
        pair_sets[name] = sample_pairs(test, n_pairs, seed=seed)
        sigmas[name] = default_perturbation_scale(data[name], sigma_scale)

    report = EvalReport(
        config={
            "n_pairs": n_pairs,
            "t_steps": t_steps,
            "sigma_scale": sigma_scale,
            "seed": seed,
            "datasets": datasets,
            "perturbation_sigma": {
                k: [float(v) for v in sigmas[k]] for k in datasets
            },
        }
    )

    pooled: dict[tuple, dict] = {}
    for entry in entries:
        key = (entry.dataset, entry.variant)
        slot = pooled.setdefault(
            key, {"geodesic": [], "variation": [], "seeds": [], "n_failed": 0,
                  "error": None}
        )
        slot["seeds"].append(entry.seed)
        if entry.manifold is None:
            slot["error"] = "missing model"
            continue
        geo = geodesic_error(entry.manifold, truths[entry.dataset],
                             pair_sets[entry.dataset], t_steps)
        var = variation_error(entry.manifold, pair_sets[entry.dataset],
                              sigmas[entry.dataset], t_steps,
                              seed=seed + entry.seed)
        slot["geodesic"].append(geo.per_pair)
        slot["variation"].append(var.per_pair)
        slot["n_failed"] += geo.n_failed + var.n_failed
        report.entries.append(
            {
                "dataset": entry.dataset,
                "variant": entry.variant,
                "seed": entry.seed,
                "geodesic_mean": geo.mean,
                "variation_mean": var.mean,
            }
        )

    for (dataset, variant), slot in sorted(pooled.items()):
        if slot["error"] is not None:
            report.cells.append(
                {"dataset": dataset, "variant": variant,
                 "seeds": slot["seeds"], "error": slot["error"]}
            )
            continue
        geo_all = np.concatenate(slot["geodesic"])
        var_all = np.concatenate(slot["variation"])
        report.cells.append(
            {
                "dataset": dataset,
                "variant": variant,
                "seeds": slot["seeds"],
                "geodesic_mean": float(geo_all.mean()),
                "geodesic_std": float(geo_all.std()),
                "variation_mean": float(var_all.mean()),
                "variation_std": float(var_all.std()),
                "n_failed": slot["n_failed"],
                "error": None,
            }
        )
    return report
