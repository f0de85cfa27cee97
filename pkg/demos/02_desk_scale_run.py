"""Generate the 8 x 40 synthetic corpus, train the tri-modal model and a
text-image-only run with the same settings, then query the result.

    python demos/02_desk_scale_run.py [workdir]

Takes about a minute on one core.
"""

import sys
import tempfile
import time
from pathlib import Path

from circret.corpus import generate_synthetic_corpus
from circret.graph import build_graph
from circret.model import ModelConfig, TrainConfig
from circret.retrieval import build_index
from circret.spice import parse_netlist
from circret.trainer import Dataset, Trainer

SETTINGS = dict(batch_size=64, lr_graph=5e-4, lr_other=2e-3, lr_heads=5e-4, eval_every_epoch=False, seed=0)


def main(work: Path):
    manifest = generate_synthetic_corpus(work / "corpus", n_per_family=40, seed=0)
    data = Dataset.from_manifest(manifest)
    print(f"corpus: {len(data.ids_in('train'))} train / {len(data.ids_in('test'))} test triplets")

    t0 = time.perf_counter()
    tri = Trainer(TrainConfig(**SETTINGS), data, work / "tri").run()
    print(f"\ntri-modal ({time.perf_counter() - t0:.0f}s), held-out Recall@K:")
    print(tri.report.to_table())

    ti = Trainer(TrainConfig(model=ModelConfig(modalities=("text", "image")), **SETTINGS), data, work / "ti").run()
    print("\ntext-image only:")
    print(ti.report.to_table())

    # caption -> netlist search over the held-out split
    test = manifest.split("test")
    model = tri.model
    index = build_index([r.id for r in test],
                        model.embed_many("code", [build_graph(parse_netlist(manifest.netlist_text(r))) for r in test]),
                        "code")
    query = test[0].caption
    print(f"\nquery: {query!r}")
    for rank, (rid, score) in enumerate(index.top_k(model.encode_text(query).vector, 5), 1):
        mark = "  <- paired netlist" if rid == test[0].id else ""
        print(f"  {rank}. {rid:<28} {score:.3f}{mark}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
