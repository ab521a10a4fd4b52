"""Command-line entry point wiring the pipeline stages together.

Subcommands: synth, segment, vectorize, pairs, evaluate, gridsearch,
report. A shared `--config` file (plain `key = value` lines) supplies
defaults; explicit flags always win. PATSIM_WORKERS sets the default
worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import engine, evaluation, grid, synth
from .corpus import load_corpus, write_corpus
from .exceptions import ConfigError, PatsimError
from .segmenter import (
    CATEGORIES,
    RelevancyMap,
    build_title_space,
    expand_prototypes,
    filter_segments,
    resolve_category,
    segment_patient,
    unfiltered_notes,
)
from .vectorizer import (
    VectorizerConfig,
    build_patient_matrix,
    compress_embeddings,
    fit_lsa,
    import_embeddings,
    load_matrices,
    save_lsa_model,
    save_matrices,
)

log = logging.getLogger("patsim")

_CONFIG_KEYS = {
    "corpus": ("path", True),
    "annotations": ("path", True),
    "imports": ("path", True),
    "relevancy": ("path", True),
    "prototypes": ("path", True),
    "out": ("str", False),
    "out_dir": ("str", False),
    "seed": ("int", False),
    "dim": ("int", False),
    "title_dim": ("int", False),
    "threshold": ("float", False),
    "workers": ("int", False),
    "min_doc_freq": ("int", False),
    "categories": ("str", False),
}


def load_config_file(path: str | Path) -> dict:
    """Parse a `key = value` config file; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        kind, must_exist = _CONFIG_KEYS[key]
        try:
            if kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad {kind} value {value!r}")
        if must_exist and not Path(value).exists():
            raise ConfigError(f"{path}:{lineno}: path {value!r} does not exist")
    return values


def _fill_defaults(args: argparse.Namespace, mapping: dict[str, str]) -> None:
    """Copy config values into unset argparse destinations."""
    config = load_config_file(args.config) if args.config else {}
    for key, dest in mapping.items():
        if getattr(args, dest, None) is None and key in config:
            setattr(args, dest, config[key])


def _resolve_workers(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("PATSIM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PATSIM_WORKERS must be an integer, got {env!r}")
    return 1


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(
                f"--{name.replace('_', '-')} is required "
                "(flag or config file)"
            )


def _relevancy_from_args(args, corpus) -> RelevancyMap:
    if getattr(args, "relevancy", None):
        return RelevancyMap.load(args.relevancy)
    if getattr(args, "prototypes", None):
        protos = json.loads(Path(args.prototypes).read_text(encoding="utf-8"))
        titles = {
            seg.title
            for patient in corpus
            for segs in segment_patient(patient, args.inherit_untitled)
            for seg in segs
        }
        dim = min(args.title_dim, max(2, len(titles)))
        space = build_title_space(
            corpus, dim, seed=args.seed, inherit_untitled=args.inherit_untitled
        )
        return expand_prototypes(protos, space, args.threshold)
    raise ConfigError("need --relevancy or --prototypes for a filtered run")


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    _require(args, "out")
    spec = synth.SynthSpec(
        n_patients=args.patients,
        n_clusters=args.clusters,
        notes_per_patient=(args.notes_min, args.notes_max),
        seed=args.seed or 0,
        vocab_size=args.vocab,
    )
    corpus, assignment = synth.generate_synthetic(spec)
    write_corpus(corpus, args.out)
    print(f"wrote {corpus.summary.n_notes} notes for "
          f"{corpus.summary.n_patients} patients to {args.out}")
    if args.assignment_out:
        synth.write_assignment_csv(assignment, args.assignment_out)
        print(f"wrote cluster assignment to {args.assignment_out}")
    if args.prototypes_out:
        protos = synth.default_prototypes(spec.category_titles)
        Path(args.prototypes_out).write_text(
            json.dumps(protos, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"wrote prototype titles to {args.prototypes_out}")
    return 0


def cmd_segment(args) -> int:
    _require(args, "corpus", "out")
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for patient in corpus:
            for segs in segment_patient(patient, args.inherit_untitled):
                for seg in segs:
                    fh.write(json.dumps(
                        {
                            "patient_id": patient.patient_id,
                            "note_index": seg.note_index,
                            "title": seg.title,
                            "body": seg.body,
                        },
                        ensure_ascii=False,
                    ))
                    fh.write("\n")
                    count += 1
    print(f"wrote {count} segments to {out}")
    return 0


def cmd_vectorize(args) -> int:
    _require(args, "corpus", "out")
    corpus = load_corpus(args.corpus)
    seed = args.seed or 0
    args.seed = seed
    filtered = args.category is not None and args.category.lower() != "all"
    if filtered:
        category = resolve_category(args.category)
        relevancy = _relevancy_from_args(args, corpus)
        titles = relevancy.for_category(category)
        notes = {
            p.patient_id: filter_segments(
                segment_patient(p, args.inherit_untitled), titles
            )
            for p in corpus
        }
        category_name = category.name
    else:
        notes = {p.patient_id: unfiltered_notes(p) for p in corpus}
        category_name = None

    if args.method == "lsa":
        docs = [fn.text for fns in notes.values() for fn in fns]
        model = fit_lsa(docs, VectorizerConfig(
            method="lsa", dim=args.dim, seed=seed,
            min_doc_freq=args.min_doc_freq,
            sublinear_tf=not args.raw_tf,
        ))
        embedder = model
        label = args.label or f"lsa{args.dim:03d}"
        if args.model_out:
            save_lsa_model(model, args.model_out)
            print(f"wrote model dump to {args.model_out}")
    else:
        _require(args, "imports", "label")
        embedder = import_embeddings(args.imports)
        native = next(iter(embedder.values())).size if embedder else args.dim
        if native > args.dim:
            embedder = compress_embeddings(embedder, args.dim, seed=seed)
        elif native < args.dim:
            raise ConfigError(
                f"imported vectors have dim {native}, need {args.dim}"
            )
        label = args.label
    if label == "combined" or not engine._VMETHOD_RE.match(label):
        raise ConfigError(
            f"--label must be <family><dim> like d2v050, got {label!r}"
        )

    matrices = {}
    absent = []
    for patient in corpus:
        fns = notes[patient.patient_id]
        mat = build_patient_matrix(patient, fns, embedder) if fns else None
        if mat is None:
            absent.append(patient.patient_id)
        else:
            matrices[patient.patient_id] = mat
    if not matrices:
        raise ConfigError("every patient was filtered out; nothing to write")
    save_matrices(matrices, args.out, meta={
        "vmethod": label,
        "filter": filtered,
        "category": category_name,
        "seed": seed,
    })
    print(f"wrote {len(matrices)} patient matrices (dim {args.dim}) to {args.out}")
    if absent:
        sidecar = Path(str(args.out) + ".exclusions.json")
        sidecar.write_text(json.dumps(sorted(absent), indent=2) + "\n",
                           encoding="utf-8")
        print(f"{len(absent)} patient(s) had no usable text; "
              f"ids listed in {sidecar}")
    return 0


def cmd_pairs(args) -> int:
    _require(args, "matrices", "out")
    matrices, meta = load_matrices(args.matrices)
    config = engine.RunConfig(
        filter=bool(meta.get("filter", False)),
        vmethod=str(meta.get("vmethod", "lsa050")),
        mmethod=args.mmethod,
        category=meta.get("category"),
        workers=_resolve_workers(args.workers),
        seed=int(meta.get("seed", 0)),
    )
    sim = engine.compute_all_pairs(matrices, config)
    engine.persist_similarity(sim, args.out)
    npairs = sim.n * (sim.n - 1) // 2
    print(f"scored {npairs} pairs ({sim.n} patients, {args.mmethod}) "
          f"in {sim.wall_time_seconds:.2f}s; wrote {args.out}")
    if args.csv:
        engine.export_csv(sim, args.csv)
        print(f"wrote CSV export to {args.csv}")
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "sim", "annotations")
    sim = engine.load_similarity(args.sim)
    validation = evaluation.load_annotations(args.annotations)
    if args.category and args.category.lower() != "all":
        categories = [resolve_category(args.category)]
    else:
        categories = list(CATEGORIES)
    rows = []
    for cat in categories:
        res = evaluation.evaluate_config(sim, validation, cat)
        rows.append((cat, res))
    print(f"{'category':<16} {'tau':>7} {'pivots':>7} {'skipped':>8} {'excluded':>9}")
    means = []
    for cat, res in rows:
        tau = "-" if res.mean is None else f"{res.mean:7.3f}"
        used = sum(1 for v in res.per_pivot.values() if v is not None)
        print(f"{cat.name:<16} {tau:>7} {used:>7} "
              f"{len(res.skipped_pivots):>8} {res.excluded_pairs:>9}")
        if res.mean is not None:
            means.append(res.mean)
    if len(rows) > 1 and means:
        print(f"{'mean':<16} {sum(means) / len(means):7.3f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("category,tau,pivots,skipped,excluded\n")
            for cat, res in rows:
                tau = "" if res.mean is None else f"{res.mean:.4f}"
                used = sum(1 for v in res.per_pivot.values() if v is not None)
                fh.write(f"{cat.name},{tau},{used},"
                         f"{len(res.skipped_pivots)},{res.excluded_pairs}\n")
        print(f"wrote {args.out}")
    return 0


def cmd_gridsearch(args) -> int:
    _require(args, "corpus", "annotations")
    if args.out_dir is None:
        raise ConfigError("--out is required (flag or config file)")
    corpus = load_corpus(args.corpus)
    validation = evaluation.load_annotations(args.annotations)
    relevancy = RelevancyMap.load(args.relevancy) if args.relevancy else None
    prototypes = None
    if relevancy is None and args.prototypes:
        prototypes = json.loads(Path(args.prototypes).read_text(encoding="utf-8"))
    options = grid.GridOptions(
        seed=args.seed or 0,
        workers=_resolve_workers(args.workers),
        threshold=args.threshold,
        title_dim=args.title_dim,
        min_doc_freq=args.min_doc_freq,
        sublinear_tf=not args.raw_tf,
        inherit_untitled=args.inherit_untitled,
    )
    report = grid.grid_search(
        corpus,
        validation,
        prototypes=prototypes,
        relevancy=relevancy,
        imports_dir=args.imports,
        options=options,
    )
    paths = grid.write_report(report, args.out_dir)
    print(grid.render_summary(report))
    print()
    print(grid.render_top10(report))
    print()
    print(f"wrote {len(paths)} report files to {args.out_dir}")
    return 0


def cmd_report(args) -> int:
    runs = [engine.load_similarity(p) for p in args.sims]
    table = engine.timing_report(runs)
    print(table.render())
    if args.csv:
        Path(args.csv).write_text(table.to_csv(), encoding="utf-8")
        print(f"wrote {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patsim",
        description="Patient similarity from note embedding matrices.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    subparser_kw = {"formatter_class": argparse.ArgumentDefaultsHelpFormatter}
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None,
                       help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for all randomized steps (unset means 0)")

    p = sub.add_parser("synth", help="generate a synthetic corpus",
                       **subparser_kw)
    common(p)
    p.add_argument("--patients", type=int, required=True,
                   help="number of patients to generate")
    p.add_argument("--clusters", type=int, required=True,
                   help="number of planted clusters")
    p.add_argument("--notes-min", type=int, default=6,
                   help="minimum notes per patient")
    p.add_argument("--notes-max", type=int, default=12,
                   help="maximum notes per patient")
    p.add_argument("--vocab", type=int, default=600,
                   help="pseudo-word vocabulary size")
    p.add_argument("--out", default=None, help="corpus JSONL path")
    p.add_argument("--assignment-out", default=None,
                   help="write patient_id,cluster CSV")
    p.add_argument("--prototypes-out", default=None,
                   help="write default prototype titles as JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="split notes into titled segments",
                       **subparser_kw)
    common(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL path")
    p.add_argument("--out", default=None, help="segments JSONL path")
    p.add_argument("--inherit-untitled", action="store_true",
                   help="untitled segments inherit the previous title")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("vectorize", help="build patient matrices",
                       **subparser_kw)
    common(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL path")
    p.add_argument("--category", default="all",
                   help="similarity category name, id, or 'all' (no filtering)")
    p.add_argument("--method", choices=("lsa", "import"), default="lsa",
                   help="fit embeddings here or read them from a file")
    p.add_argument("--dim", type=int, default=50,
                   help="embedding dimension")
    p.add_argument("--out", default=None, help="matrix container path")
    p.add_argument("--imports", default=None,
                   help="embedding JSONL file (method=import)")
    p.add_argument("--label", default=None,
                   help="vectorizer leg name recorded in the container "
                        "(e.g. d2v050); defaults to lsa<dim> for lsa")
    p.add_argument("--relevancy", default=None, help="relevancy map JSON")
    p.add_argument("--prototypes", default=None, help="prototype titles JSON")
    p.add_argument("--threshold", type=float, default=0.7,
                   help="cosine threshold for prototype expansion")
    p.add_argument("--title-dim", type=int, default=16,
                   help="dimension of the title latent space")
    p.add_argument("--min-doc-freq", type=int, default=1,
                   help="drop tokens seen in fewer documents")
    p.add_argument("--raw-tf", action="store_true",
                   help="use raw counts instead of 1+log(count)")
    p.add_argument("--inherit-untitled", action="store_true",
                   help="untitled segments inherit the previous title")
    p.add_argument("--model-out", default=None, help="save the LSA model dump")
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("pairs", help="score all patient pairs",
                       **subparser_kw)
    common(p)
    p.add_argument("--matrices", default=None,
                   help="matrix container from vectorize")
    p.add_argument("--mmethod", choices=engine.MMETHODS, required=True,
                   help="matrix similarity measure")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: PATSIM_WORKERS or 1)")
    p.add_argument("--out", default=None, help="similarity file path")
    p.add_argument("--csv", default=None, help="also export id_a,id_b,score,defined")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("evaluate",
                       help="correlate a similarity file with annotations",
                       **subparser_kw)
    common(p)
    p.add_argument("--sim", default=None, help="similarity file from pairs")
    p.add_argument("--annotations", default=None,
                   help="annotation CSV path")
    p.add_argument("--category", default="all",
                   help="one category or 'all'")
    p.add_argument("--out", default=None, help="write per-category CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="run the full 2x7x3 evaluation grid",
                       **subparser_kw)
    common(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL path")
    p.add_argument("--annotations", default=None,
                   help="annotation CSV path")
    p.add_argument("--imports", default=None,
                   help="directory with d2v050.jsonl etc. for imported legs")
    p.add_argument("--out", dest="out_dir", default=None,
                   help="directory for the report tables")
    p.add_argument("--relevancy", default=None, help="relevancy map JSON")
    p.add_argument("--prototypes", default=None, help="prototype titles JSON")
    p.add_argument("--threshold", type=float, default=0.7,
                   help="cosine threshold for prototype expansion")
    p.add_argument("--title-dim", type=int, default=16,
                   help="dimension of the title latent space")
    p.add_argument("--min-doc-freq", type=int, default=1,
                   help="drop tokens seen in fewer documents")
    p.add_argument("--raw-tf", action="store_true",
                   help="use raw counts instead of 1+log(count)")
    p.add_argument("--inherit-untitled", action="store_true",
                   help="untitled segments inherit the previous title")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: PATSIM_WORKERS or 1)")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("report", help="timing table over similarity files",
                       **subparser_kw)
    common(p)
    p.add_argument("--sims", nargs="+", required=True,
                   help="similarity files to tabulate")
    p.add_argument("--csv", default=None, help="also write a CSV table")
    p.set_defaults(func=cmd_report)

    return parser


_CONFIG_FILL = {
    "synth": {"out": "out", "seed": "seed"},
    "segment": {"corpus": "corpus", "out": "out", "seed": "seed"},
    "vectorize": {
        "corpus": "corpus", "out": "out", "seed": "seed",
        "relevancy": "relevancy", "prototypes": "prototypes",
        "imports": "imports",
    },
    "pairs": {"out": "out", "workers": "workers", "seed": "seed"},
    "evaluate": {"annotations": "annotations", "seed": "seed"},
    "gridsearch": {
        "corpus": "corpus", "annotations": "annotations",
        "imports": "imports", "out_dir": "out_dir",
        "relevancy": "relevancy", "prototypes": "prototypes",
        "workers": "workers", "seed": "seed",
    },
    "report": {},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _fill_defaults(args, _CONFIG_FILL.get(args.command, {}))
        return args.func(args)
    except PatsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
