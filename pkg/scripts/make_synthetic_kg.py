"""
Write a self-contained synthetic task directory: graph, labels, targets,
template and task config, ready for `qgnn train / decompose / infer / bench`.

Usage:
    python scripts/make_synthetic_kg.py demo --seed 0 --nodes-per-type 200
    python -m qgnn train --config demo/task.json
"""
import argparse
import json
from pathlib import Path

from qgnn.services.query_template import QueryTemplate
from qgnn.services.synthetic import ABOUT, NAMESPACE, make_typed_kg


def main():
    parser = argparse.ArgumentParser(description="Generate a synthetic typed KG task")
    parser.add_argument("out", help="Output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--num-targets", type=int, default=40)
    parser.add_argument("--nodes-per-type", type=int, default=8)
    parser.add_argument("--num-types", type=int, default=4)
    parser.add_argument("--num-predicates", type=int, default=4)
    parser.add_argument("--extra-nodes", type=int, default=0)
    parser.add_argument("--two-hop", action="store_true")
    parser.add_argument("--link-prediction", action="store_true", help="Write an LP task on the about predicate")
    parser.add_argument("--chunk-rows", type=int, default=64)
    args = parser.parse_args()

    kg = make_typed_kg(
        args.seed, args.num_targets, args.nodes_per_type, args.num_types,
        args.num_predicates, args.extra_nodes, args.two_hop,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "kg.tsv").write_text(kg.graph.to_tsv(), encoding="utf-8")
    (out / "targets.txt").write_text("".join(f"{t}\n" for t in kg.targets), encoding="utf-8")
    QueryTemplate.from_text(kg.template).save(out / "template.rq")

    config = {
        "task": "synthetic-lp" if args.link_prediction else "synthetic",
        "kind": "link-prediction" if args.link_prediction else "node-classification",
        "target_type": kg.target_type,
        "hops": 2 if args.two_hop else 1,
        "kg_path": "kg.tsv",
        "labels_path": "labels.tsv",
        "targets_path": "targets.txt",
        "template_path": "template.rq",
        "store_root": "store",
        "seed": args.seed,
        "chunk_rows": args.chunk_rows,
    }
    if args.link_prediction:
        labels = "".join(f"{h}\t{t}\n" for h, t in kg.link_positives)
        config.update(link_predicate=ABOUT, candidate_type=NAMESPACE + "Author")
    else:
        labels = kg.labels_tsv()
    (out / "labels.tsv").write_text(labels, encoding="utf-8")
    (out / "task.json").write_text(json.dumps(config, indent=2), encoding="utf-8")

    print(f"{len(kg.graph)} triples, {len(kg.targets)} targets -> {out}")
    print(f"Next: python -m qgnn train --config {out / 'task.json'}")


if __name__ == "__main__":
    main()
