"""Batch command-line front end for the full pipeline.

Exit codes: 0 success, 2 argument errors, 3 data/parse errors,
4 no-mark-found.  One-line diagnostics go to stderr.  MARKMATCH_MODEL and
MARKMATCH_POOL env vars provide defaults for --model / --pool.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import encoder, pgm, retrieval, segmentation, synth, training
from .errors import (
    DuplicateEnrollmentError,
    EmptyPoolError,
    FileFormatError,
    MarkMatchError,
    NoMarkFoundError,
    TrainingDivergedError,
)
from .losses import LossConfig
from .rng import rng_from

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NO_MARK = 4


def _env_default(var: str):
    return os.environ.get(var)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic mark dataset")
    p.add_argument("--writers", type=int, required=True)
    p.add_argument("--marks", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train an encoder on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true", help="pairwise-BCE baseline objective")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.07)

    p = sub.add_parser("embed", help="print a mark's embedding")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--image", required=True)

    p = sub.add_parser("enroll", help="enroll a mark into the pool")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--pool", default=_env_default("MARKMATCH_POOL"), required=_env_default("MARKMATCH_POOL") is None)
    p.add_argument("--ballot", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--prompt", help='"point:x,y" or "box:x0,y0,x1,y1" to segment first')

    p = sub.add_parser("query", help="rank pool marks against a query mark")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--pool", default=_env_default("MARKMATCH_POOL"), required=_env_default("MARKMATCH_POOL") is None)
    p.add_argument("--image", required=True)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--prompt", help="optional prompt to segment the query from a page")
    p.add_argument("--csv", help="also write the ranking as CSV to this path")

    p = sub.add_parser("heatmap", help="pool x queries score matrix as CSV")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--pool", default=_env_default("MARKMATCH_POOL"), required=_env_default("MARKMATCH_POOL") is None)
    p.add_argument("--queries", required=True, help="directory of query mark PGMs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="pair-F1 and top-k accuracy on a dataset directory")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--model", default=_env_default("MARKMATCH_MODEL"), required=_env_default("MARKMATCH_MODEL") is None)
    p.add_argument("--pool", default=_env_default("MARKMATCH_POOL"), required=_env_default("MARKMATCH_POOL") is None)
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--allow-origin", default="*")

    return parser


def _parse_prompt(text: str) -> segmentation.SegmentPrompt:
    kind, _, payload = text.partition(":")
    try:
        values = [float(v) for v in payload.split(",")] if payload else []
    except ValueError as exc:
        raise ValueError(f"bad prompt {text!r}: {exc}") from exc
    if kind == "point" and len(values) == 2:
        return segmentation.SegmentPrompt(kind="point", point=tuple(values))
    if kind == "box" and len(values) == 4:
        return segmentation.SegmentPrompt(kind="box", box=tuple(values))
    raise ValueError(f'bad prompt {text!r}: expected "point:x,y" or "box:x0,y0,x1,y1"')


def _load_dataset_dir(data_dir: str):
    root = Path(data_dir)
    annotations = pgm.read_annotations(root / "annotations.txt")
    groups: dict[int, list] = {}
    for a in annotations:
        pixels = pgm.read_pgm(root / f"{a.mark_id}.pgm")
        from .images import MarkImage

        groups.setdefault(a.writer_id, []).append(
            MarkImage(pixels=pixels, mark_id=a.mark_id, ballot_id=a.ballot_id)
        )
    return [(wid, groups[wid]) for wid in sorted(groups)]


def _mark_for_model(params, image_path: str, prompt_text: str | None):
    pixels = pgm.read_pgm(image_path)
    if prompt_text:
        seg = segmentation.segment(pixels, _parse_prompt(prompt_text))
        return seg.crop
    from .images import MarkImage

    return MarkImage(pixels=pixels)


def _load_or_new_pool(path: str, dim: int) -> retrieval.Pool:
    if Path(path).exists():
        pool = retrieval.load_pool(path)
        if pool.dim != dim:
            raise FileFormatError(f"pool dim {pool.dim} does not match model dim {dim}")
        return pool
    return retrieval.Pool(dim=dim)


def _next_mark_index(pool: retrieval.Pool, ballot_id: str) -> int:
    return sum(1 for r in pool.records if r.ballot_id == ballot_id)


def cmd_synth(args) -> int:
    dataset = synth.generate_dataset(args.writers, args.marks, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    annotations = []
    for writer_id, marks in dataset:
        for mark in marks:
            pgm.write_pgm(out / f"{mark.mark_id}.pgm", mark.pixels)
            annotations.append(
                pgm.Annotation(
                    mark_id=mark.mark_id,
                    ballot_id=mark.ballot_id,
                    bbox=(0, 0, mark.width, mark.height),
                    writer_id=writer_id,
                )
            )
    pgm.write_annotations(out / "annotations.txt", annotations)
    print(f"wrote {len(annotations)} marks to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = _load_dataset_dir(args.data)
    cfg = training.TrainConfig(
        batch_size=args.batch,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        loss=LossConfig(temperature=args.temperature),
    )
    trainer = training.train_pairwise_baseline if args.baseline else training.train_contrastive
    report = trainer(dataset, cfg, progress=True)
    encoder.save_params(report.params, args.out)
    print(f"saved model to {args.out} ({report.wall_seconds:.1f}s)")
    return EXIT_OK


def cmd_embed(args) -> int:
    params = encoder.load_params(args.model)
    mark = _mark_for_model(params, args.image, None)
    emb = encoder.embed(params, mark)
    print(" ".join(f"{v:.17g}" for v in emb))
    return EXIT_OK


def cmd_enroll(args) -> int:
    params = encoder.load_params(args.model)
    mark = _mark_for_model(params, args.image, args.prompt)
    pool = _load_or_new_pool(args.pool, params.config.embedding_dim)
    emb = encoder.embed(params, mark)
    alias = pool.enroll(emb, ballot_id=args.ballot, mark_index=_next_mark_index(pool, args.ballot))
    retrieval.save_pool(pool, args.pool)
    print(alias)
    return EXIT_OK


def _format_table(matches) -> str:
    header = f"{'rank':>4}  {'alias':<12}  {'softmax':>10}  {'logit':>10}"
    rows = [header, "-" * len(header)]
    for m in matches:
        rows.append(f"{m.rank:>4}  {m.alias:<12}  {m.softmax_score:>10.4f}  {m.raw_logit:>10.4f}")
    return "\n".join(rows)


def _ranking_csv(matches) -> str:
    lines = ["rank,alias,softmax_score,raw_logit"]
    for m in matches:
        lines.append(f"{m.rank},{m.alias},{m.softmax_score:.17g},{m.raw_logit:.17g}")
    return "\n".join(lines) + "\n"


def cmd_query(args) -> int:
    params = encoder.load_params(args.model)
    mark = _mark_for_model(params, args.image, args.prompt)
    pool = retrieval.load_pool(args.pool)
    emb = encoder.embed(params, mark)
    matches = retrieval.query(pool, emb, k=args.k)
    print(_format_table(matches))
    if args.csv:
        Path(args.csv).write_text(_ranking_csv(matches), encoding="ascii")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    params = encoder.load_params(args.model)
    pool = retrieval.load_pool(args.pool)
    query_dir = Path(args.queries)
    paths = sorted(query_dir.glob("*.pgm"))
    if not paths:
        raise FileFormatError(f"no .pgm files in {query_dir}")
    from .images import MarkImage

    embs = [encoder.embed(params, MarkImage(pixels=pgm.read_pgm(p))) for p in paths]
    matrix = retrieval.heatmap(pool, embs, query_labels=[p.stem for p in paths])
    Path(args.out).write_text(retrieval.heatmap_to_csv(matrix), encoding="ascii")
    print(f"wrote {len(matrix.pool_aliases)}x{len(matrix.query_aliases)} heatmap to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = encoder.load_params(args.model)
    dataset = _load_dataset_dir(args.data)
    rng = rng_from(args.seed)
    pairs = training.make_eval_pairs(dataset, args.pairs, rng)
    f1, threshold = training.evaluate_pair_f1(params, pairs)

    queries, pool = [], []
    queries_per_writer = 1 if min(len(m) for _w, m in dataset) < 3 else 2
    for wid, marks in dataset:
        for m in marks[:queries_per_writer]:
            queries.append((m, wid))
        for m in marks[queries_per_writer:]:
            pool.append((m, wid))
    top1 = training.evaluate_topk(params, queries, pool, k=1)
    top5 = training.evaluate_topk(params, queries, pool, k=5)
    print(f"pair_f1 {f1:.4f} threshold {threshold:.6f}")
    print(f"top1_accuracy {top1:.4f}")
    print(f"top5_accuracy {top5:.4f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad --addr {args.addr!r}, expected HOST:PORT")
    app = build_app(model_path=args.model, pool_path=args.pool, allow_origin=args.allow_origin)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "enroll": cmd_enroll,
    "query": cmd_query,
    "heatmap": cmd_heatmap,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NoMarkFoundError as exc:
        print(f"markmatch: {exc}", file=sys.stderr)
        return EXIT_NO_MARK
    except (FileFormatError, DuplicateEnrollmentError, EmptyPoolError, TrainingDivergedError, OSError) as exc:
        print(f"markmatch: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, MarkMatchError) as exc:
        print(f"markmatch: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
