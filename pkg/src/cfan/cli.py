"""Command-line pipeline: gen-data, train, aggregate, evaluate, analyze-corr.

Every command is deterministic given its inputs and seeds, exits 0 on
success and nonzero with a single-line ``error: ...`` diagnostic on any
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import evaluation, io, synthetic, training
from .aggregation import pool_average, pool_cfan, pool_instance, quality_forward
from .core import cosine_similarity


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic feature file")
    g.add_argument("--config", required=True, help="run config path")
    g.add_argument("--seed", type=int, default=None, help="override the data seed")
    g.add_argument("--out", default=None, help="output feature file")

    t = sub.add_parser("train", help="train a quality head on a feature file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", default=None, help="feature file (default: config data_path)")
    t.add_argument("--mode", choices=["instance", "cfan"], default=None)
    t.add_argument("--seed", type=int, default=None, help="override the training seed")
    t.add_argument("--out", default=None, help="output model file")
    t.add_argument("--log", default=None, help="optional training-log path")

    a = sub.add_parser("aggregate", help="fuse every template into one vector")
    a.add_argument("--data", required=True, help="feature file")
    a.add_argument("--model", default=None, help="model file (required unless --mode average)")
    a.add_argument("--mode", choices=["average", "instance", "cfan"], default="average")
    a.add_argument("--out", required=True, help="output representation file")

    e = sub.add_parser("evaluate", help="score representations under a protocol")
    e.add_argument("--gallery", default=None, help="gallery representation file")
    e.add_argument("--probes", default=None, help="probe representation file")
    e.add_argument("--gallery-templates", default=None,
                   help="comma list of template suffixes to keep as gallery")
    e.add_argument("--probe-templates", default=None,
                   help="comma list of template suffixes to keep as probes")
    e.add_argument("--reps", default=None, help="representation file for --pairs")
    e.add_argument("--pairs", default=None,
                   help="pair list: 'template_a template_b same|different' per line")
    e.add_argument("--ranks", default="1,5,10")
    e.add_argument("--fpir", default="0.01,0.1")
    e.add_argument("--far", default="0.001,0.01")
    e.add_argument("--cmc-curve", default=None, help="optional CSV dump of the CMC curve")
    e.add_argument("--out", default=None, help="report path (default: stdout)")

    c = sub.add_parser("analyze-corr", help="within-subject component correlation matrix")
    c.add_argument("--data", required=True, help="feature file")
    c.add_argument("--out", required=True, help="output CSV path")
    return p


def cmd_gen_data(args) -> None:
    cfg = io.load_config(args.config)
    noise = cfg.noise
    if args.seed is not None:
        noise = dataclasses.replace(noise, seed=args.seed)
    if noise.n_subjects == 0:
        raise ValueError("empty dataset")
    out = args.out or cfg.out_path or cfg.data_path
    if out is None:
        raise ValueError("no output path (--out or config data_path)")
    ds = synthetic.generate(noise)
    n = io.write_feature_file(out, noise.map_dim, noise.dim, io.dataset_records(ds, cfg.template_size))
    print(f"wrote {n} instances to {out}")


def cmd_train(args) -> None:
    cfg = io.load_config(args.config)
    data_path = args.data or cfg.data_path
    if data_path is None:
        raise ValueError("no feature file (--data or config data_path)")
    out = args.out or cfg.model_path
    if out is None:
        raise ValueError("no output path (--out or config model_path)")
    tc = cfg.train
    if args.seed is not None:
        tc = dataclasses.replace(tc, rng_seed=args.seed)
    mode = args.mode or cfg.mode
    if mode == "average":
        raise ValueError("mode average has no trainable head")
    map_dim, dim, records = io.read_feature_file(data_path)
    ds = io.group_by_subject(map_dim, dim, records)
    if tc.augment_sigma() is not None:
        if cfg.noise.map_dim != map_dim or cfg.noise.dim != dim:
            raise ValueError("augmentation config dimensions do not match the feature file")
        ds = dataclasses.replace(ds, config=cfg.noise)
    head, log = training.train(ds, tc, mode=mode)
    io.save_model(out, head)
    if args.log:
        io.write_training_log(args.log, log)
    final = log[-1].loss if log else float("nan")
    print(f"trained {tc.steps} steps (final loss {final:g}), model at {out}")


def cmd_aggregate(args) -> None:
    map_dim, dim, records = io.read_feature_file(args.data)
    head = None
    if args.mode != "average":
        if args.model is None:
            raise ValueError(f"mode {args.mode} requires --model")
        head = io.load_model(args.model)
        if head.mode != args.mode:
            raise ValueError(f"model was trained for mode {head.mode}, not {args.mode}")
        if head.map_dim != map_dim:
            raise ValueError("model input dimension does not match the feature file")
    reps = []
    for sid, tid, maps, embs in io.group_by_template(records):
        if args.mode == "average":
            rep = pool_average(embs)
        elif args.mode == "instance":
            Q, _ = quality_forward(maps, head, stats="frozen")
            rep = pool_instance(embs, Q[:, 0])
        else:
            Q, _ = quality_forward(maps, head, stats="frozen")
            rep = pool_cfan(embs, Q)
        reps.append(io.RepRecord(sid, tid, rep.n_instances, rep.vector))
    n = io.write_reps_file(args.out, dim, args.mode, reps)
    print(f"wrote {n} template representations to {args.out}")


def _parse_floats(csv: str) -> list[float]:
    return [float(x) for x in csv.split(",") if x.strip()]


def _filter_reps(records, suffixes):
    if suffixes is None:
        return records
    keep = {s.strip() for s in suffixes.split(",") if s.strip()}
    out = [r for r in records if r.template_id.rsplit("/", 1)[-1] in keep]
    if not out:
        raise ValueError(f"no templates matched suffixes {sorted(keep)}")
    return out


def cmd_evaluate(args) -> None:
    if args.pairs is not None:
        report = _evaluate_pairs(args)
    else:
        report = _evaluate_identification(args)
    text = io.format_report(report)
    if args.out:
        io.write_text(args.out, text)
        print(f"wrote report to {args.out}")
    else:
        sys.stdout.write(text)


def _evaluate_pairs(args) -> evaluation.EvalReport:
    if args.reps is None:
        raise ValueError("--pairs requires --reps")
    _, _, records = io.read_reps_file(args.reps)
    by_tid = {r.template_id: r.vector for r in records}
    scores, same = [], []
    with open(args.pairs, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("same", "different"):
                raise ValueError(
                    f"{args.pairs}:{lineno}: expected 'template_a template_b same|different'"
                )
            for tid in parts[:2]:
                if tid not in by_tid:
                    raise ValueError(f"{args.pairs}:{lineno}: unknown template {tid!r}")
            scores.append(cosine_similarity(by_tid[parts[0]], by_tid[parts[1]]))
            same.append(parts[2] == "same")
    result = evaluation.pairwise_protocol(np.array(scores), np.array(same))
    return evaluation.EvalReport(cmc=[], tpir_fpir=[], tar_far=[], pairs=result)


def _evaluate_identification(args) -> evaluation.EvalReport:
    if args.gallery is None or args.probes is None:
        raise ValueError("identification needs --gallery and --probes (or use --pairs)")
    gdim, _, graw = io.read_reps_file(args.gallery)
    pdim, _, praw = io.read_reps_file(args.probes)
    if gdim != pdim:
        raise ValueError("gallery and probe dimensions differ")
    gal = _filter_reps(graw, args.gallery_templates)
    probes = _filter_reps(praw, args.probe_templates)
    gal_ids = [r.subject_id for r in gal]
    probe_ids = [r.subject_id for r in probes]
    scores = evaluation.score_matrix(
        np.stack([r.vector for r in probes]), np.stack([r.vector for r in gal])
    )
    truth, mated = evaluation.identification_arrays(gal_ids, probe_ids)
    ranks = [int(r) for r in _parse_floats(args.ranks)]
    cmc = []
    if mated.all():
        ir = evaluation.closed_set_ir(scores, truth, ranks)
        cmc = [(k, ir[k]) for k in ranks]
    elif mated.any():
        ir = evaluation.closed_set_ir(scores[mated], truth[mated], ranks)
        cmc = [(k, ir[k]) for k in ranks]
    tpir = []
    if (~mated).any():
        tpir = evaluation.open_set_tpir(scores, truth, mated, _parse_floats(args.fpir))
    gal_arr = np.array(gal_ids, dtype=object)
    probe_arr = np.array(probe_ids, dtype=object)
    genuine_mask = probe_arr[:, None] == gal_arr[None, :]
    genuine = scores[genuine_mask]
    impostor = scores[~genuine_mask]
    tar = []
    if genuine.size and impostor.size:
        tar = evaluation.verification_tar(genuine, impostor, _parse_floats(args.far))
    if args.cmc_curve and mated.any():
        curve = evaluation.cmc_curve(scores[mated], truth[mated], scores.shape[1])
        io.write_text(
            args.cmc_curve,
            "".join(f"{i + 1},{v:.17g}\n" for i, v in enumerate(curve)),
        )
    return evaluation.EvalReport(cmc=cmc, tpir_fpir=tpir, tar_far=tar)


def cmd_analyze_corr(args) -> None:
    map_dim, dim, records = io.read_feature_file(args.data)
    ds = io.group_by_subject(map_dim, dim, records)
    corr = synthetic.intra_class_correlation(s.embeddings for s in ds.subjects)
    io.write_text(
        args.out,
        "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in corr),
    )
    print(f"wrote {corr.shape[0]}x{corr.shape[1]} correlation matrix to {args.out}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "aggregate": cmd_aggregate,
        "evaluate": cmd_evaluate,
        "analyze-corr": cmd_analyze_corr,
    }
    try:
        handlers[args.command](args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
