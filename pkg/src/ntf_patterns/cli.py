"""Command-line pipeline: ingest/synth -> cc-scan -> fit -> cluster -> stats -> report.

Every stage reads its inputs from, and writes its outputs to, the output
directory, so any stage can be rerun on its own.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .artifacts import (
    load_tensor,
    read_csv,
    read_json,
    read_matrix,
    save_tensor,
    sha256_file,
    write_csv,
    write_json,
    write_matrix,
)
from .clustering import elbow_curve, kmeans, kmedoids, membership_shares, silhouette
from .config import PipelineConfig, apply_overrides, load_config
from .corcondia import cc_scan
from .demographics import (
    ATTRIBUTE_LABELS,
    ATTRIBUTES,
    jaccard_overlap,
    null_tests,
    pairwise_tests,
    representative_groups,
    share_table,
)
from .ingest import (
    DEMOGRAPHIC_HEADER,
    ConfigurationError,
    SchemaError,
    build_tensor,
    read_demographics,
    read_receipts,
)
from .parafac import fit_multi, normalize
from .synth import SyntheticSpec, generate_synthetic
from .tensor import FactorModel, relative_error

log = logging.getLogger("ntf_patterns")

DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

REPORT_FILES = (
    "fig2_core_consistency.csv",
    "fig3a_day_of_week.csv",
    "fig3b_weekly.csv",
    "fig4_cluster_demographics.csv",
    "fig5_component_demographics.csv",
    "figS3_elbow.csv",
    "figS5_jaccard.csv",
    "manifest.json",
)


class PipelineError(RuntimeError):
    """A stage cannot run, usually because an upstream artifact is missing."""


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise PipelineError(f"{path} not found; run `{stage}` first")
    return path


def _echo(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _write_demographics(path: Path, demo) -> None:
    write_csv(
        path,
        DEMOGRAPHIC_HEADER,
        ([uid, *(demo.value(uid, a) for a in DEMOGRAPHIC_HEADER[1:])] for uid in demo.users),
    )


def cmd_ingest(cfg: PipelineConfig) -> dict:
    if not cfg.receipts:
        raise ConfigurationError("no receipts path configured (set receipts=...)")
    records, errors = read_receipts(cfg.receipts)
    t, users, report = build_tensor(records, cfg.calendar)
    report.errors = errors
    cal = cfg.calendar.resolved(records)
    meta = {
        "week_start": cal.week_start,
        "week_starts": [d.isoformat() for d in cal.week_starts()],
        "source": "receipts",
    }
    save_tensor(cfg.out / "tensor", t, users, meta)
    out = {"receipts": report.as_dict()}
    if cfg.demographics:
        demo, demo_errors = read_demographics(cfg.demographics)
        _write_demographics(cfg.out / "demographics.csv", demo)
        out["demographics"] = {
            "n_users": len(demo),
            "n_errors": len(demo_errors),
            "errors": [{"line": e.line, "message": e.message} for e in demo_errors],
        }
    write_json(cfg.out / "ingest_report.json", out)
    _echo(
        f"records={report.n_records} included={report.n_included} "
        f"out_of_window={report.n_out_of_window} malformed={len(errors)} "
        f"shape={t.shape[0]}x{t.shape[1]}x{t.shape[2]}"
    )
    return out


def cmd_synth(cfg: PipelineConfig) -> dict:
    spec = cfg.synthetic or SyntheticSpec(seed=cfg.seed)
    data = generate_synthetic(spec)
    save_tensor(
        cfg.out / "tensor",
        data.tensor,
        data.user_ids,
        {"week_start": 0, "week_starts": None, "source": "synthetic"},
    )
    _write_demographics(cfg.out / "demographics.csv", data.demographics)
    sdir = cfg.out / "synth"
    comps = [f"comp_{r + 1}" for r in range(spec.rank)]
    write_matrix(sdir / "truth_A.csv", data.truth.A, data.user_ids, comps, "user_id")
    write_matrix(sdir / "truth_B.csv", data.truth.B, DAY_NAMES, comps, "day")
    write_matrix(sdir / "truth_C.csv", data.truth.C, range(spec.n_weeks), comps, "week")
    write_csv(sdir / "labels.csv", ["user_id", "group"], zip(data.user_ids, (data.labels + 1).tolist()))
    manifest = {"spec": spec.as_dict(), "relative_noise": relative_error(data.tensor, data.truth)}
    write_json(sdir / "manifest.json", manifest)
    _echo(f"synthetic tensor {data.tensor.shape}, relative noise {manifest['relative_noise']:.6g}")
    return manifest


def _load_tensor(cfg: PipelineConfig):
    _require(cfg.out / "tensor" / "tensor.json", "ingest` or `synth")
    return load_tensor(cfg.out / "tensor")


def cmd_ccscan(cfg: PipelineConfig) -> dict:
    t, _, _ = _load_tensor(cfg)
    base = cfg.fit.fit_config(cfg.seed, rank=1)
    report = cc_scan(t, cfg.cc_ranks, cfg.n_runs, base, cfg.cc_threshold, cfg.threads)
    cdir = cfg.out / "ccscan"
    rows = report.table()
    write_csv(
        cdir / "ccscan.csv",
        ["rank", "mean", "ci_low", "ci_high", "n_runs", "n_failed", "selected"],
        ([r["rank"], r["mean"], r["ci_low"], r["ci_high"], r["n_runs"], r["n_failed"], r["selected"]]
         for r in rows),
    )
    write_csv(
        cdir / "ccscan_runs.csv",
        ["rank", "seed", "cc"],
        ([s.rank, seed, v] for s in report.ranks for seed, v in zip(s.seeds, s.values)),
    )
    summary = {
        "threshold": report.threshold,
        "selected_rank": report.selected_rank,
        "n_runs": cfg.n_runs,
        "seed": cfg.seed,
        "table": rows,
        "warnings": report.warnings,
    }
    write_json(cdir / "report.json", summary)
    for r in rows:
        mean = "nan" if r["mean"] is None else f"{r['mean']:.4f}"
        _echo(f"R={r['rank']} mean_cc={mean}{' *' if r['selected'] else ''}")
    _echo(f"selected_rank={report.selected_rank}")
    return summary


def _week_labels(meta: dict, K: int) -> list:
    starts = meta.get("week_starts")
    return list(starts) if starts and len(starts) == K else list(range(K))


def _day_labels(meta: dict) -> list[str]:
    ws = int(meta.get("week_start", 0))
    return [DAY_NAMES[(ws + j) % 7] for j in range(7)]


def cmd_fit(cfg: PipelineConfig) -> dict:
    t, users, meta = _load_tensor(cfg)
    rank = cfg.fit.rank
    if rank is None:
        rep = read_json(_require(cfg.out / "ccscan" / "report.json", "cc-scan"))
        rank = rep["selected_rank"]
        if rank is None:
            raise PipelineError("cc-scan selected no rank; set fit.rank explicitly")
    multi = fit_multi(t, cfg.fit.fit_config(cfg.seed, rank), cfg.n_runs, cfg.threads)
    best = multi.best
    model = normalize(best.model)
    fdir = cfg.out / "fit"
    comps = [f"comp_{r + 1}" for r in range(rank)]
    write_matrix(fdir / "factors_A.csv", model.A, users, comps, "user_id")
    write_matrix(fdir / "factors_B.csv", model.B, _day_labels(meta), comps, "day")
    write_matrix(fdir / "factors_C.csv", model.C, _week_labels(meta, t.shape[2]), comps, "week")
    write_csv(fdir / "weights.csv", ["component", "weight"], zip(comps, model.weights.tolist()))
    manifest = {
        "rank": rank,
        "n_runs": cfg.n_runs,
        "best_seed": best.seed,
        "relative_error": relative_error(t, model),
        "objective": best.objective,
        "iterations": best.iterations,
        "converged": best.converged,
        "warnings": best.warnings,
        "runs": [{"seed": s, "objective": o} for s, o in zip(multi.seeds, multi.objectives)],
    }
    write_json(fdir / "manifest.json", manifest)
    _echo(f"rank={rank} best_seed={best.seed} relative_error={manifest['relative_error']:.6g}")
    return manifest


def load_model(cfg: PipelineConfig) -> tuple[FactorModel, list[str]]:
    fdir = cfg.out / "fit"
    users, _, A = read_matrix(_require(fdir / "factors_A.csv", "fit"))
    _, _, B = read_matrix(fdir / "factors_B.csv")
    _, _, C = read_matrix(fdir / "factors_C.csv")
    _, rows = read_csv(fdir / "weights.csv")
    w = np.array([float(r[1]) for r in rows])
    return FactorModel(A, B, C, w), users


def cmd_cluster(cfg: PipelineConfig) -> dict:
    model, users = load_model(cfg)
    points, inactive = membership_shares(model.weighted_A())
    n = points.shape[0]
    method = kmedoids if cfg.cluster_method == "kmedoids" else kmeans
    res = method(points, cfg.k, cfg.seed)
    cdir = cfg.out / "cluster"
    write_csv(cdir / "clusters.csv", ["user_id", "cluster"], zip(users, (res.labels + 1).tolist()))
    mean_sil = None
    if len(np.unique(res.labels)) >= 2:
        coeffs, mean_sil = silhouette(points, res.labels)
        write_csv(
            cdir / "silhouette.csv",
            ["user_id", "cluster", "silhouette"],
            zip(users, (res.labels + 1).tolist(), coeffs.tolist()),
        )
    ks = [k for k in cfg.k_range if 1 <= k <= n]
    elbow = elbow_curve(points, ks, cfg.seed)
    write_csv(cdir / "elbow.csv", ["k", "cost"], elbow)
    manifest = {
        "method": res.method,
        "k": cfg.k,
        "seed": cfg.seed,
        "total_cost": res.total_cost,
        "mean_silhouette": mean_sil,
        "sizes": res.cluster_sizes().tolist(),
        "centers": res.centers.tolist(),
        "n_inactive_users": int(inactive.sum()),
    }
    write_json(cdir / "manifest.json", manifest)
    _echo(f"method={res.method} k={cfg.k} cost={res.total_cost:.6g} mean_silhouette={mean_sil}")
    return manifest


def _load_demographics(cfg: PipelineConfig):
    path = cfg.out / "demographics.csv"
    if not path.exists() and cfg.demographics:
        path = Path(cfg.demographics)
    if not path.exists():
        return None
    demo, errors = read_demographics(path)
    for e in errors:
        log.warning("demographics line %d: %s", e.line, e.message)
    return demo


def cmd_stats(cfg: PipelineConfig) -> dict | None:
    demo = _load_demographics(cfg)
    if demo is None:
        log.warning("no demographics available; stats skipped")
        return None
    _, rows = read_csv(_require(cfg.out / "cluster" / "clusters.csv", "cluster"))
    labels = {uid: int(c) for uid, c in rows}
    model, users = load_model(cfg)
    sdir = cfg.out / "stats"

    nulls = null_tests(labels, demo)
    write_csv(
        sdir / "chi2_null.csv",
        ["attribute", "chi2", "dof", "p_value", "significance"],
        ([ATTRIBUTE_LABELS[a], r.statistic, r.dof, r.p_value, r.stars] for a, r in nulls.items()),
    )
    pair_rows = []
    if len(set(labels.values())) >= 2:
        for attr in ATTRIBUTES:
            for pt in pairwise_tests(labels, demo, attr):
                r = pt.result
                pair_rows.append([ATTRIBUTE_LABELS[attr], pt.cluster_x, pt.cluster_y, r.statistic,
                                  r.stars, r.dof, r.p_value, r.p_corrected])
    write_csv(
        sdir / "chi2_pairwise.csv",
        ["attribute", "cluster_x", "cluster_y", "chi2", "significance", "dof", "p_value", "p_corrected"],
        pair_rows,
    )

    clusters: dict[int, list[str]] = {}
    for uid, c in labels.items():
        clusters.setdefault(c, []).append(uid)
    share_header = ["attribute", "category", "group", "count", "share"]
    write_csv(
        sdir / "cluster_demographics.csv",
        share_header,
        ([r[h] for h in share_header] for a in ATTRIBUTES for r in share_table(clusters, demo, a)),
    )

    groups = representative_groups(model.weighted_A(), cfg.representative_fraction, users)
    write_csv(
        sdir / "representative_groups.csv",
        ["component", "threshold", "n_members"],
        ([r + 1, groups.thresholds[r], len(m)] for r, m in enumerate(groups.members)),
    )
    write_csv(
        sdir / "representative_members.csv",
        ["component", "user_id"],
        ([r + 1, uid] for r, m in enumerate(groups.members) for uid in m),
    )
    comp_groups = {r + 1: m for r, m in enumerate(groups.members)}
    write_csv(
        sdir / "component_demographics.csv",
        share_header,
        ([r[h] for h in share_header] for a in ATTRIBUTES for r in share_table(comp_groups, demo, a)),
    )
    J = jaccard_overlap(groups)
    comps = [f"comp_{r + 1}" for r in range(J.shape[0])]
    write_matrix(sdir / "jaccard.csv", J, comps, comps, "component")
    summary = {a: {"chi2": r.statistic, "dof": r.dof, "p_value": r.p_value} for a, r in nulls.items()}
    for a, r in nulls.items():
        _echo(f"{ATTRIBUTE_LABELS[a]}: chi2={r.statistic:.4f} dof={r.dof} p={r.p_value:.4g}")
    return summary


def _input_hashes(cfg: PipelineConfig) -> dict:
    out = {}
    for key in ("receipts", "demographics"):
        p = getattr(cfg, key)
        if p and Path(p).exists():
            out[key] = sha256_file(p)
    if cfg.synthetic is not None or (cfg.out / "synth" / "manifest.json").exists():
        spec = cfg.synthetic or SyntheticSpec(seed=cfg.seed)
        blob = json.dumps(spec.as_dict(), sort_keys=True).encode()
        out["synthetic_spec"] = hashlib.sha256(blob).hexdigest()
    out["tensor"] = sha256_file(_require(cfg.out / "tensor" / "tensor.csv", "ingest` or `synth"))
    return out


def cmd_report(cfg: PipelineConfig) -> dict:
    rdir = cfg.out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    needed = {
        "fig2_core_consistency.csv": (cfg.out / "ccscan" / "ccscan.csv", "cc-scan"),
        "fig3a_day_of_week.csv": (cfg.out / "fit" / "factors_B.csv", "fit"),
        "fig3b_weekly.csv": (cfg.out / "fit" / "factors_C.csv", "fit"),
        "fig4_cluster_demographics.csv": (cfg.out / "stats" / "cluster_demographics.csv", "stats"),
        "fig5_component_demographics.csv": (cfg.out / "stats" / "component_demographics.csv", "stats"),
        "figS3_elbow.csv": (cfg.out / "cluster" / "elbow.csv", "cluster"),
        "figS5_jaccard.csv": (cfg.out / "stats" / "jaccard.csv", "stats"),
    }
    for name, (src, stage) in needed.items():
        _require(src, stage)
    for name, (src, _) in needed.items():
        (rdir / name).write_bytes(src.read_bytes())
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "ntf_patterns": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "input_hashes": _input_hashes(cfg),
        "files": list(REPORT_FILES),
    }
    write_json(rdir / "manifest.json", manifest)
    _echo(f"report written to {rdir}")
    return manifest


def cmd_run(cfg: PipelineConfig) -> None:
    if cfg.receipts:
        cmd_ingest(cfg)
    else:
        cmd_synth(cfg)
    cmd_ccscan(cfg)
    cmd_fit(cfg)
    cmd_cluster(cfg)
    if cmd_stats(cfg) is None:
        raise PipelineError("report needs demographics; stats were skipped")
    cmd_report(cfg)


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "cc-scan": cmd_ccscan,
    "fit": cmd_fit,
    "cluster": cmd_cluster,
    "stats": cmd_stats,
    "report": cmd_report,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (dotted for sections); repeatable")
    common.add_argument("--threads", type=int, help="cap on worker threads for multi-run loops")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="ntf-patterns",
        description="Multi-timescale pattern mining from transaction logs with non-negative PARAFAC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "build the count tensor from a receipt CSV",
        "synth": "generate a planted synthetic population",
        "cc-scan": "core-consistency scan over ranks",
        "fit": "best-of-n non-negative PARAFAC fit",
        "cluster": "cluster users by component membership",
        "stats": "chi-squared demographic tests and representative users",
        "report": "collect plot-ready tables and a run manifest",
        "run": "all stages in order",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = list(args.overrides)
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        if args.output is not None:
            overrides.append(f"output_dir={json.dumps(args.output)}")
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        COMMANDS[args.command](cfg)
    except (OSError, SchemaError, ConfigurationError, PipelineError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
