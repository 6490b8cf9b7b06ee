"""Command-line front end: config-driven pipelines with deterministic artifacts.

Every sweep row derives its own seed from the global seed and a stable row
key, so results are independent of sweep order and worker count; all files
are written with LF endings and repr-formatted floats, which makes repeated
runs byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .bounds import (
    ProbeConfig,
    alignment_eps,
    corollary_reports,
    report_to_text,
    theorem1_check,
    theorem3_check,
    theorem4_check,
    _restrict_space,
)
from .config import ConfigError, RunConfig, load_config, make_transforms, row_seed
from .graph import build_graph, connected_components, laplacian_spectrum
from .linalg import save_matrix_text
from .objectives import (
    McConfig,
    ce_risk,
    classification_error,
    fit_linear_head,
    infonce_population,
    mean_head,
    spectral_loss,
    train_free_embeddings,
)
from .svd import TruncationSpec
from .world import (
    build_augmented_space,
    generate_world,
    inflate,
    labeling_error,
    preprocess_world,
    save_world,
)

SWEEP_COLUMNS = [
    "q",
    "k",
    "alpha_q",
    "lambda_k_q",
    "lambda_k1_q",
    "bound_t4",
    "probe_error",
    "infonce",
    "spectral_loss",
    "ce_mean",
    "ce_linear",
    "eps_min",
    "eps_max",
    "verdicts",
    "seed",
]


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(rows, path) -> None:
    """Fixed column order, '.' decimals, LF line endings."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_cell(row.get(col)) for col in SWEEP_COLUMNS])


def emit_text(rows, path) -> None:
    """Structured text: one key = value block per row, stable key order."""
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        for i, row in enumerate(rows):
            if i:
                fh.write("\n")
            for col in SWEEP_COLUMNS:
                fh.write(f"{col} = {_fmt_cell(row.get(col))}\n")


def parse_csv(path):
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [dict(zip(header, row)) for row in reader]


# ---------------------------------------------------------------------------
# pipeline


def _stage_world(cfg: RunConfig, raw_world, q=None):
    """Apply the configured preprocessing (or the sweep override) + inflation."""
    world = raw_world
    trunc = cfg.truncation(q)
    if trunc is not None:
        world = preprocess_world(world, trunc)
    if cfg.inflation_factor > 1:
        world = inflate(world, cfg.inflation_factor, seed=cfg.seed)
    return world


def _space_and_graph(world, transforms):
    space = build_augmented_space(world, transforms)
    graph = build_graph(space)
    if len(graph.kept) != space.n:
        space = _restrict_space(space, graph.kept)
    return space, graph


def compute_row(cfg: RunConfig, raw_world, transforms, q, k, row_key):
    """One full pipeline evaluation; returns (row dict, list of BoundReports)."""
    seed = row_seed(cfg.seed, row_key)
    world = _stage_world(cfg, raw_world, q)
    space, graph = _space_and_graph(world, transforms)
    if not (1 <= k <= graph.n):
        raise ConfigError(f"train.k: k={k} out of range [1, {graph.n}]")
    spectrum = laplacian_spectrum(graph)
    alpha = labeling_error(space, world).alpha
    lam_k = float(spectrum.values[k - 1])
    lam_k1 = float(spectrum.values[k]) if k < graph.n else None

    mc = McConfig(
        samples=cfg.mc_samples,
        replicates=cfg.mc_replicates,
        seed=seed,
        n_max=cfg.mc_n_max,
        m_max=cfg.mc_m_max,
    )
    f = train_free_embeddings(
        space,
        k,
        cfg.train_loss,
        steps=cfg.train_steps,
        step_size=cfg.train_step_size,
        seed=seed,
        M=cfg.train_M,
        cfg=mc,
    )
    head = fit_linear_head(
        f, space, cfg.probe_steps, cfg.probe_step_size, cfg.probe_l2, seed
    )
    nce, _, _ = infonce_population(f, space, cfg.train_M, mc)
    eps = alignment_eps(f, space)
    reports = []
    if "t1" in cfg.bounds_which and f.normalized:
        reports.append(theorem1_check(f, space, cfg.train_M, mc))
    if "t3" in cfg.bounds_which and f.normalized:
        reports.append(theorem3_check(f, space, cfg.train_M, mc))
    bound_t4 = None
    if "t4" in cfg.bounds_which:
        t4 = theorem4_check(
            world,
            transforms,
            k,
            ProbeConfig(
                steps=cfg.probe_steps,
                step_size=cfg.probe_step_size,
                l2=cfg.probe_l2,
                seed=seed,
            ),
        )
        reports.append(t4)
        bound_t4 = t4.terms.get("bound")
    if "corollaries" in cfg.bounds_which and f.normalized:
        reports.extend(corollary_reports(f, space, cfg.train_M, mc, head))

    row = {
        "q": q if q is not None else (cfg.svd_q if cfg.svd_mode == "keep_top_q" else None),
        "k": k,
        "alpha_q": alpha,
        "lambda_k_q": lam_k,
        "lambda_k1_q": lam_k1,
        "bound_t4": bound_t4,
        "probe_error": classification_error(f, head, space),
        "infonce": nce,
        "spectral_loss": spectral_loss(f, space),
        "ce_mean": ce_risk(f, mean_head(f, space), space),
        "ce_linear": ce_risk(f, head, space),
        "eps_min": None if eps.empty else eps.eps_min,
        "eps_max": None if eps.empty else eps.eps_max,
        "verdicts": ";".join(f"{r.theorem}={r.verdict}" for r in reports),
        "seed": seed,
    }
    return row, reports


def _map_rows(tasks, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda t: t(), tasks))
    return [t() for t in tasks]


def sweep_q(cfg: RunConfig, raw_world, transforms, threads=1):
    """Baseline row (no preprocessing) followed by one row per sweep q."""
    tasks = [
        lambda: compute_row(cfg, raw_world, transforms, None, cfg.train_k, "baseline")
    ]
    for q in cfg.svd_sweep:
        tasks.append(
            lambda q=q: compute_row(
                cfg, raw_world, transforms, q, cfg.train_k, f"q={q}"
            )
        )
    results = _map_rows(tasks, threads)
    rows = [r for r, _ in results]
    rows[0]["q"] = None  # baseline row carries no q
    reports = [rep for _, reps in results for rep in reps]
    return rows, reports


def sweep_k(cfg: RunConfig, raw_world, transforms, threads=1):
    tasks = [
        lambda k=k: compute_row(
            cfg, raw_world, transforms, None, k, f"k={k}"
        )
        for k in cfg.train_k_sweep
    ]
    results = _map_rows(tasks, threads)
    return [r for r, _ in results], [rep for _, reps in results for rep in reps]


def _argmin_summary(rows, key):
    best = None
    for row in rows:
        err = row.get("probe_error")
        if err is None:
            continue
        if best is None or err < best[1]:
            best = (row.get(key), err)
    if best is None:
        return f"argmin_{key} = none"
    return f"argmin_{key} = {_fmt_cell(best[0])} (probe_error = {_fmt_cell(best[1])})"


def _write_manifest(cfg: RunConfig, path, extra_lines=()):
    lines = [f"ctlab {__version__}", f"seed = {cfg.seed}"]
    echo = {
        "world": vars(cfg.world),
        "svd": {"mode": cfg.svd_mode, "q": cfg.svd_q, "pair_index": cfg.svd_pair_index, "sweep": cfg.svd_sweep},
        "train": {
            "loss": cfg.train_loss, "k": cfg.train_k, "k_sweep": cfg.train_k_sweep,
            "steps": cfg.train_steps, "step_size": cfg.train_step_size, "m": cfg.train_M,
        },
        "probe": {"steps": cfg.probe_steps, "step_size": cfg.probe_step_size, "l2": cfg.probe_l2},
        "bounds": {
            "which": cfg.bounds_which, "mc_samples": cfg.mc_samples,
            "mc_replicates": cfg.mc_replicates, "n_max": cfg.mc_n_max, "m_max": cfg.mc_m_max,
        },
        "inflation": {"factor": cfg.inflation_factor},
        "transforms": {
            "rho": cfg.rho,
            **{name: f"{kind} {' '.join(map(str, args))} {prob}".replace("  ", " ")
               for name, kind, args, prob in cfg.transform_descriptors},
        },
    }
    for section in sorted(echo):
        for key in sorted(echo[section]):
            lines.append(f"{section}.{key} = {echo[section][key]}")
    lines.extend(extra_lines)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _violations(reports):
    return [r for r in reports if r.verdict == "violated"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(cfg: RunConfig, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    raw_world = generate_world(cfg.world)
    transforms = make_transforms(cfg, raw_world)
    save_world(raw_world, os.path.join(out_dir, "world"))

    base_row, base_reports = compute_row(
        cfg, raw_world, transforms, None, cfg.train_k, "baseline"
    )
    all_reports = list(base_reports)
    writers = {"csv": emit_csv, "text": emit_text}
    exts = {"csv": "csv", "text": "txt"}
    for fmt in cfg.output_formats:
        writers[fmt](
            [base_row], os.path.join(out_dir, f"baseline.{exts[fmt]}")
        )
    summaries = []
    if cfg.svd_sweep:
        rows, reports = sweep_q(cfg, raw_world, transforms, threads)
        all_reports.extend(reports)
        for fmt in cfg.output_formats:
            writers[fmt](rows, os.path.join(out_dir, f"sweep_q.{exts[fmt]}"))
        summaries.append(_argmin_summary(rows, "q"))
    if cfg.train_k_sweep:
        rows, reports = sweep_k(cfg, raw_world, transforms, threads)
        all_reports.extend(reports)
        for fmt in cfg.output_formats:
            writers[fmt](rows, os.path.join(out_dir, f"sweep_k.{exts[fmt]}"))
        summaries.append(_argmin_summary(rows, "k"))
    with open(os.path.join(out_dir, "bounds.txt"), "w", newline="\n") as fh:
        for i, rep in enumerate(all_reports):
            if i:
                fh.write("\n")
            fh.write(report_to_text(rep))
    _write_manifest(cfg, os.path.join(out_dir, "manifest.txt"), summaries)
    bad = _violations(all_reports)
    for rep in bad:
        print(f"violated: {rep.theorem} slack={rep.slack}", file=sys.stderr)
    if bad and not allow_violations:
        return 1
    return 0


def cmd_world(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    world = _stage_world(cfg, generate_world(cfg.world))
    save_world(world, os.path.join(out_dir, "world"))
    return 0


def cmd_svd(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    raw = generate_world(cfg.world)
    trunc = cfg.truncation()
    if trunc is None:
        raise ConfigError("svd.mode: subcommand svd needs a mode other than none")
    save_world(preprocess_world(raw, trunc), os.path.join(out_dir, "world"))
    return 0


def cmd_graph(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    raw_world = generate_world(cfg.world)
    transforms = make_transforms(cfg, raw_world)
    world = _stage_world(cfg, raw_world)
    space, graph = _space_and_graph(world, transforms)
    spectrum = laplacian_spectrum(graph)
    save_matrix_text(os.path.join(out_dir, "adjacency.mat"), graph.A)
    save_matrix_text(
        os.path.join(out_dir, "spectrum.mat"), spectrum.values.reshape(1, -1)
    )
    with open(os.path.join(out_dir, "graph.txt"), "w", newline="\n") as fh:
        fh.write(f"nodes = {graph.n}\n")
        fh.write(f"components = {connected_components(graph.A)}\n")
        fh.write(f"alpha = {labeling_error(space, world).alpha!r}\n")
        fh.write(f"trace = {float(np.trace(graph.A))!r}\n")
    return 0


def _train_embedding(cfg, seed_key="train"):
    raw_world = generate_world(cfg.world)
    transforms = make_transforms(cfg, raw_world)
    world = _stage_world(cfg, raw_world)
    space, graph = _space_and_graph(world, transforms)
    seed = row_seed(cfg.seed, seed_key)
    mc = McConfig(
        samples=cfg.mc_samples,
        replicates=cfg.mc_replicates,
        seed=seed,
        n_max=cfg.mc_n_max,
        m_max=cfg.mc_m_max,
    )
    f = train_free_embeddings(
        space,
        cfg.train_k,
        cfg.train_loss,
        steps=cfg.train_steps,
        step_size=cfg.train_step_size,
        seed=seed,
        M=cfg.train_M,
        cfg=mc,
    )
    return f, space, world, transforms, seed, mc


def cmd_train(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    f, space, _world, _tr, _seed, _mc = _train_embedding(cfg)
    save_matrix_text(os.path.join(out_dir, "embedding.mat"), f.table)
    with open(os.path.join(out_dir, "embedding_nodes.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(space.node_ids) + "\n")
    return 0


def cmd_probe(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    f, space, _world, _tr, seed, _mc = _train_embedding(cfg)
    head = fit_linear_head(
        f, space, cfg.probe_steps, cfg.probe_step_size, cfg.probe_l2, seed
    )
    err = classification_error(f, head, space)
    ce_lin = ce_risk(f, head, space)
    ce_mu = ce_risk(f, mean_head(f, space), space)
    with open(os.path.join(out_dir, "probe.txt"), "w", newline="\n") as fh:
        fh.write(f"probe_error = {err!r}\n")
        fh.write(f"ce_linear = {ce_lin!r}\n")
        fh.write(f"ce_mean = {ce_mu!r}\n")
        fh.write(f"head_frob_norm = {head.frob_norm!r}\n")
    print(f"probe_error = {err!r}")
    return 0


def cmd_bounds(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    raw_world = generate_world(cfg.world)
    transforms = make_transforms(cfg, raw_world)
    row, reports = compute_row(cfg, raw_world, transforms, None, cfg.train_k, "bounds")
    with open(os.path.join(out_dir, "bounds.txt"), "w", newline="\n") as fh:
        for i, rep in enumerate(reports):
            if i:
                fh.write("\n")
            fh.write(report_to_text(rep))
    bad = _violations(reports)
    for rep in bad:
        print(f"violated: {rep.theorem} slack={rep.slack}", file=sys.stderr)
    if bad and not allow_violations:
        return 1
    return 0


def cmd_sweep(cfg, out_dir, threads, allow_violations):
    os.makedirs(out_dir, exist_ok=True)
    if not cfg.svd_sweep and not cfg.train_k_sweep:
        raise ConfigError("sweep: neither svd.sweep nor train.k_sweep configured")
    raw_world = generate_world(cfg.world)
    transforms = make_transforms(cfg, raw_world)
    all_reports = []
    writers = {"csv": emit_csv, "text": emit_text}
    exts = {"csv": "csv", "text": "txt"}
    summaries = []
    if cfg.svd_sweep:
        rows, reports = sweep_q(cfg, raw_world, transforms, threads)
        all_reports.extend(reports)
        for fmt in cfg.output_formats:
            writers[fmt](rows, os.path.join(out_dir, f"sweep_q.{exts[fmt]}"))
        summaries.append(_argmin_summary(rows, "q"))
    if cfg.train_k_sweep:
        rows, reports = sweep_k(cfg, raw_world, transforms, threads)
        all_reports.extend(reports)
        for fmt in cfg.output_formats:
            writers[fmt](rows, os.path.join(out_dir, f"sweep_k.{exts[fmt]}"))
        summaries.append(_argmin_summary(rows, "k"))
    _write_manifest(cfg, os.path.join(out_dir, "manifest.txt"), summaries)
    for line in summaries:
        print(line)
    bad = _violations(all_reports)
    if bad and not allow_violations:
        return 1
    return 0


_COMMANDS = {
    "run": cmd_run,
    "world": cmd_world,
    "svd": cmd_svd,
    "graph": cmd_graph,
    "train": cmd_train,
    "probe": cmd_probe,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ctlab",
        description="Exact desk-scale laboratory for labeling error in contrastive learning",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override global seed")
    parser.add_argument("--out", default=None, help="artifact directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--allow-violations", action="store_true")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config entry (repeatable)",
    )
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        out_dir = args.out if args.out is not None else cfg.output_directory
        return _COMMANDS[args.command](
            cfg, out_dir, max(1, args.threads), args.allow_violations
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
