#!/usr/bin/env python3
"""Build the committed frontend fixtures: a trained model, a pre-enrolled
24-ballot pool, the query ballot page, and the walkthrough metadata.

Enrollment embeddings are computed from the 8-bit PGM bytes of each page
(exactly what the service computes for an upload), so a console session
that uploads the saved query page reproduces the enrolled embedding
bit-for-bit.

Usage: python3 scripts/make_webui_fixture.py [--out frontend/fixtures]
"""

import argparse
import io
import json
from pathlib import Path

import numpy as np

from markmatch import pgm, retrieval
from markmatch.encoder import embed, save_params
from markmatch.segmentation import SegmentPrompt, segment
from markmatch.synth import generate_dataset, render_ballot, sample_writer
from markmatch.training import TrainConfig, train_contrastive

DESK_SEED = 11
HELDOUT_SEED = 12


def pgm_of(image) -> bytes:
    buf = io.BytesIO()
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
    buf.write(data.tobytes())
    return buf.getvalue()


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="frontend/fixtures")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print("training desk-scale model (pinned seed)...")
    dataset = generate_dataset(50, 20, seed=DESK_SEED)
    report = train_contrastive(dataset, TrainConfig(seed=DESK_SEED), progress=True)
    params = report.params
    save_params(params, out / "model.mm")

    target = sample_writer(2000, HELDOUT_SEED)
    distractors = [sample_writer(2001 + i, HELDOUT_SEED) for i in range(23)]

    pool = retrieval.Pool(dim=params.config.embedding_dim)
    query_prompt = None
    di = 0
    for bi in range(24):
        if bi == 5:
            styles, grid = [target] * 3, (1, 3)
        elif bi == 23:
            styles, grid = [target], (1, 1)
        else:
            styles, grid = [distractors[di]], (1, 1)
            di += 1
        ballot = render_ballot(styles, grid[0], grid[1], seed=900 + bi, ballot_id=f"page{bi}")
        page = pgm.decode_pgm(pgm_of(ballot.image))  # 8-bit view, as uploaded
        for mi, bubble in enumerate(ballot.bubbles):
            x0, y0, x1, y1 = bubble.bbox
            point = ((x0 + x1) // 2, (y0 + y1) // 2)
            seg = segment(page, SegmentPrompt(kind="point", point=point))
            alias = pool.enroll(embed(params, seg.crop), ballot_id=f"page{bi}", mark_index=mi)
            print(f"  ballot {bi} mark {mi} -> {alias}")
            if bi == 23:
                (out / "query_ballot.pgm").write_bytes(pgm_of(ballot.image))
                query_prompt = point

    retrieval.save_pool(pool, out / "pool.mmp")
    (out / "walkthrough.json").write_text(
        json.dumps(
            {
                "prompt": {"x": query_prompt[0], "y": query_prompt[1]},
                "query_alias": "alias23_0",
                "same_writer_aliases": ["alias5_0", "alias5_1", "alias5_2"],
                "k": 5,
            },
            indent=2,
        )
        + "\n"
    )
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
