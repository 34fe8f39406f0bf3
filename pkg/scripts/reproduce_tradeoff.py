"""
Quality / diversity trade-off of the confidence sampler

Generates de novo samples over a (tau, r) grid with a trained denoiser and reports
validity, uniqueness, diversity and quality per setting.

Usage:
    python scripts/reproduce_tradeoff.py --checkpoint runs/denoiser.ckpt --n 500 --plot
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np  # noqa: E402

from Denoiser.checkpoint import load_checkpoint  # noqa: E402
from Metrics.set_metrics import set_metrics  # noqa: E402
from Orchestrator.persistence import write_json  # noqa: E402
from Orchestrator.task_templates import build_templates  # noqa: E402
from Sampler.length_model import LengthModel  # noqa: E402
from Sampler.sampler import SamplerParams, generate_batch  # noqa: E402
from SafeGrammar.safe_parser import read_corpus  # noqa: E402
from SafeGrammar.token_table import DEFAULT_TABLE  # noqa: E402

GRID = ((0.5, 0.5), (1.0, 1.0), (1.5, 10.0))


def main():
    parser = argparse.ArgumentParser(description="Sampler temperature / randomness sweep")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--corpus", default="data/toy_corpus.txt")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--out", default="runs/tradeoff.json")
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()

    denoiser = load_checkpoint(args.checkpoint).to_model()
    lengths = LengthModel.from_corpus([DEFAULT_TABLE.tokenize(s) for s in read_corpus(args.corpus)])
    templates = build_templates("denovo", [], args.n, lengths, np.random.default_rng(args.seed))

    rows = []
    for tau, r in GRID:
        outputs = generate_batch(denoiser, templates, SamplerParams(N=1, tau=tau, r=r, seed=args.seed),
                                 workers=args.workers, silent=False)
        metrics = set_metrics([DEFAULT_TABLE.detokenize(ids) for ids in outputs]).to_dict()
        rows.append({"tau": tau, "r": r, **metrics})
        print(f"tau={tau:<4} r={r:<5} validity {metrics['validity']:.3f} uniqueness {metrics['uniqueness']:.3f} "
              f"diversity {metrics['diversity']:.3f} quality {metrics['quality']:.3f}")

    write_json(args.out, rows)
    if args.plot:
        from Orchestrator.plotting import plot_tradeoff
        png = Path(args.out).with_suffix(".png")
        plot_tradeoff([(f"tau={row['tau']}, r={row['r']}", row["diversity"], row["quality"]) for row in rows], png)
        print(f"Wrote {png}")
    print(f"Wrote {args.out}")


if __name__ == "__main__":
    main()
