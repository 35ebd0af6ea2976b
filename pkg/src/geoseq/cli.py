"""Command-line entry point: ``geoseq <subcommand> ...``.

Exit codes: 0 success, 1 data errors (bad molecules or lines), 2 usage errors.
"""
from __future__ import annotations

import argparse
import gzip
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import codec, lmgen, metrics
from .canon import OrderStrategy
from .molgraph import Molecule3D, XYZParseError, parse_xyz, split_xyz_blocks, write_xyz

log = logging.getLogger("geoseq")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    inputs: Tuple[str, ...] = ()
    output: Optional[str] = None
    decimals_dist: int = 2
    decimals_angle: int = 2
    order: str = OrderStrategy.CANONICAL_LOCALITY.value
    tokenize: str = "whole"
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")


def read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {path}")
    if p.suffix == ".gz":
        with gzip.open(p, "rt", encoding="utf-8") as fh:
            return fh.read()
    return p.read_text(encoding="utf-8")


def write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    if p.suffix == ".gz":
        with gzip.open(p, "wt", encoding="utf-8") as fh:
            fh.write(text)
    else:
        p.write_text(text, encoding="utf-8")


def stream_seed(seed: int, index: int) -> int:
    """Independent per-item seed derived from the run seed and the item position."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def parallel_map(fn: Callable, items: Sequence, workers: int) -> List:
    """Results in input order regardless of scheduling."""
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _is_xyz(path: str, text: str) -> bool:
    name = path[:-3] if path.endswith(".gz") else path
    if name.endswith(".xyz"):
        return True
    first = next((line for line in text.splitlines() if line.strip()), "")
    return first.strip().isdigit()


# ---------------------------------------------------------------------------
# workers (module level so they pickle)

def _encode_block(item, cfg: RunConfig, prop_name: Optional[str], edges: Optional[List[float]]):
    index, (lineno, block) = item
    try:
        mols = parse_xyz(block)
        if len(mols) != 1:
            raise ValueError("expected exactly one molecule")
        mol = mols[0]
        prop = None
        if prop_name is not None:
            if prop_name not in mol.properties:
                raise ValueError(f"missing property {prop_name!r}")
            prop = lmgen.property_bucket(mol.properties[prop_name], prop_name, edges)
        seq = codec.encode(
            mol,
            cfg.decimals_dist,
            cfg.decimals_angle,
            cfg.order,
            cfg.tokenize,
            seed=stream_seed(cfg.seed, index),
            prop=prop,
        )
        return str(seq), None
    except (XYZParseError, ValueError, KeyError) as exc:
        if isinstance(exc, XYZParseError):
            exc = f"{str(exc).rsplit(' at line ', 1)[0]} at line {exc.line + lineno - 1}"
        return None, f"block {index + 1} (line {lineno}): {exc}"


def _decode_line(line: str):
    try:
        return codec.decode(codec.TokenSequence.parse(line)), None
    except codec.GrammarError as exc:
        return None, str(exc)


def _roundtrip_one(mol: Molecule3D, cfg: RunConfig):
    rt = codec.roundtrip(mol, cfg.decimals_dist, cfg.decimals_angle, cfg.order)
    return rt.errors, rt.violations


def _sample_one(index: int, model_path: str, cfg: lmgen.SamplerConfig, condition: Optional[str]):
    model = _cached_model(model_path)
    rng = np.random.default_rng([cfg.seed, index])
    return str(lmgen.sample(model, cfg, condition, rng=rng))


_MODEL_CACHE = {}


def _cached_model(path: str) -> lmgen.NgramModel:
    if path not in _MODEL_CACHE:
        if not Path(path).exists():
            raise UsageError(f"no such file: {path}")
        _MODEL_CACHE[path] = lmgen.NgramModel.load(path)
    return _MODEL_CACHE[path]


# ---------------------------------------------------------------------------
# commands

def _blocks(inputs: Iterable[str]) -> List[Tuple[int, str]]:
    out = []
    for path in inputs:
        out.extend(split_xyz_blocks(read_text(path)))
    return out


def _property_edges(blocks, name: str, buckets: int) -> List[float]:
    values = []
    for _, block in blocks:
        try:
            props = parse_xyz(block)[0].properties
        except (XYZParseError, ValueError, IndexError):
            continue
        if name in props:
            values.append(props[name])
    if not values:
        raise UsageError(f"no molecule carries property {name!r}")
    return lmgen.quantile_edges(values, buckets)


def cmd_encode(cfg: RunConfig, prop_name: Optional[str] = None, edges: Optional[List[float]] = None,
               buckets: int = 10) -> int:
    blocks = _blocks(cfg.inputs)
    if prop_name is not None and edges is None:
        edges = _property_edges(blocks, prop_name, buckets)
        log.info("property %s bucket edges: %s", prop_name, " ".join(f"{e:.6g}" for e in edges))
    fn = partial(_encode_block, cfg=cfg, prop_name=prop_name, edges=edges)
    results = parallel_map(fn, list(enumerate(blocks)), cfg.workers)
    lines, failures = [], 0
    for seq, err in results:
        if err is not None:
            failures += 1
            log.error(err)
        else:
            lines.append(seq + "\n")
    write_text(cfg.output, "".join(lines))
    return EXIT_DATA if failures else EXIT_OK


def cmd_decode(cfg: RunConfig) -> int:
    lines = []
    for path in cfg.inputs:
        lines.extend(read_text(path).splitlines())
    numbered = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    results = parallel_map(_decode_line, [line for _, line in numbered], cfg.workers)
    mols, failures = [], 0
    for (lineno, _), (mol, err) in zip(numbered, results):
        if err is not None:
            failures += 1
            log.error("line %d: %s", lineno, err)
        else:
            mols.append(mol)
    write_text(cfg.output, write_xyz(mols))
    return EXIT_DATA if failures else EXIT_OK


def _load_molecules(path: str) -> Tuple[List[Molecule3D], int]:
    """Molecules from an XYZ or sequence file, plus the count of undecodable lines."""
    text = read_text(path)
    if _is_xyz(path, text):
        return parse_xyz(text), 0
    mols, bad = [], 0
    for line in text.splitlines():
        if not line.strip():
            continue
        mol, err = _decode_line(line)
        if err is None:
            mols.append(mol)
        else:
            bad += 1
    return mols, bad


def cmd_roundtrip_check(cfg: RunConfig) -> int:
    mols = []
    for path in cfg.inputs:
        mols.extend(parse_xyz(read_text(path)))
    results = parallel_map(partial(_roundtrip_one, cfg=cfg), mols, cfg.workers)
    errors = [e for errs, _ in results for e in errs]
    violations = sum(v for _, v in results)
    report = {
        "molecules": len(mols),
        "atoms": len(errors),
        "decimals_dist": cfg.decimals_dist,
        "decimals_angle": cfg.decimals_angle,
        "max_error": max(errors) if errors else 0.0,
        "mean_error": float(np.mean(errors)) if errors else 0.0,
        "bound_violations": int(violations),
    }
    write_text(cfg.output, json.dumps(report, indent=2) + "\n")
    return EXIT_DATA if violations else EXIT_OK


def cmd_build_vocab(cfg: RunConfig, cap: int) -> int:
    seqs = []
    for path in cfg.inputs:
        seqs.extend(codec.read_sequences(read_text(path)))
    try:
        vocab = codec.build_vocab(seqs, cap)
    except codec.VocabularyOverflow as exc:
        log.error("%s", exc)
        return EXIT_DATA
    write_text(cfg.output, vocab.dumps())
    log.info("vocabulary size %d", len(vocab))
    return EXIT_OK


def cmd_train(cfg: RunConfig, order: int, backoff: float, vocab_path: Optional[str], cap: int) -> int:
    seqs = []
    for path in cfg.inputs:
        seqs.extend(codec.read_sequences(read_text(path)))
    if not seqs:
        log.error("empty training corpus")
        return EXIT_DATA
    vocab = codec.Vocabulary.loads(read_text(vocab_path)) if vocab_path else codec.build_vocab(seqs, cap)
    model = lmgen.train(seqs, vocab, order, backoff)
    if cfg.output is None:
        raise UsageError("train needs --output")
    model.save(cfg.output)
    return EXIT_OK


def cmd_sample(cfg: RunConfig, model_path: str, count: int, sampler: lmgen.SamplerConfig,
               condition: Optional[str], max_invalid: float) -> int:
    model = _cached_model(model_path)
    if condition is not None and condition not in model.vocab:
        raise UsageError(f"condition token {condition!r} not in the model vocabulary")
    fn = partial(_sample_one, model_path=model_path, cfg=sampler, condition=condition)
    lines = parallel_map(fn, list(range(count)), cfg.workers)
    invalid = [i for i, line in enumerate(lines) if not codec.is_valid(line.split())]
    for i in invalid:
        log.warning("sample %d fails the sequence grammar", i + 1)
    write_text(cfg.output, "".join(line + "\n" for line in lines))
    if count and len(invalid) / count > max_invalid:
        log.error("%d of %d samples invalid (threshold %.1f%%)", len(invalid), count, 100 * max_invalid)
        return EXIT_DATA
    return EXIT_OK


def cmd_eval(cfg: RunConfig, reference: str, train_path: Optional[str], json_out: Optional[str]) -> int:
    generated, bad = [], 0
    for path in cfg.inputs:
        mols, b = _load_molecules(path)
        generated.extend(mols)
        bad += b
    if not generated:
        log.error("no decodable molecules")
        return EXIT_DATA
    ref, _ = _load_molecules(reference)
    train_certs = None
    if train_path:
        train_mols, _ = _load_molecules(train_path)
        train_certs = {metrics.molecule_certificate(m) for m in train_mols}
    report = metrics.evaluate(generated, ref, train_certs)
    if bad:
        log.warning("%d undecodable sequences excluded", bad)
    payload = json.dumps(report.as_dict(), indent=2) + "\n"
    if json_out:
        write_text(json_out, payload)
    write_text(cfg.output, report.table() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoseq", description="3D molecules <-> invariant token sequences")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        if inputs:
            p.add_argument("inputs", nargs="+")
        p.add_argument("-o", "--output", default=None, help="output file (default stdout)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")

    def codec_flags(p):
        p.add_argument("--decimals-dist", type=int, default=2)
        p.add_argument("--decimals-angle", type=int, default=2)
        p.add_argument("--order", choices=[s.value for s in OrderStrategy], default="canonical-locality")
        p.add_argument("--tokenize", choices=["whole", "split"], default="whole")

    p = sub.add_parser("encode", help="XYZ -> sequence file")
    common(p)
    codec_flags(p)
    p.add_argument("--property", dest="prop_name", default=None, help="prefix a bucketed property token")
    p.add_argument("--buckets", type=int, default=10)
    p.add_argument("--edges", default=None, help="comma-separated bucket edges (default: quantiles of the input)")

    p = sub.add_parser("decode", help="sequence file -> XYZ")
    common(p)

    p = sub.add_parser("roundtrip-check", help="encode+decode each molecule and check the rounding bound")
    common(p)
    codec_flags(p)

    p = sub.add_parser("build-vocab", help="vocabulary file from sequence files")
    common(p)
    p.add_argument("--cap", type=int, default=16000)

    p = sub.add_parser("train", help="fit the counting model")
    common(p)
    p.add_argument("--order", type=int, default=6)
    p.add_argument("--backoff", type=float, default=0.4)
    p.add_argument("--vocab", default=None)
    p.add_argument("--cap", type=int, default=16000)

    p = sub.add_parser("sample", help="draw sequences from a trained model")
    common(p, inputs=False)
    p.add_argument("--model", required=True)
    p.add_argument("-n", "--count", type=int, default=100)
    p.add_argument("--top-k", type=int, default=80)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--condition", default=None, help="property token, e.g. prop:alpha=3")
    p.add_argument("--max-invalid", type=float, default=0.05, help="fraction of invalid samples tolerated")

    p = sub.add_parser("eval", help="metrics of generated molecules against a reference set")
    common(p)
    p.add_argument("--reference", required=True)
    p.add_argument("--train", default=None, help="training set for novelty")
    p.add_argument("--json", dest="json_out", default=None)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig(
            inputs=tuple(getattr(args, "inputs", ()) or ()),
            output=args.output,
            decimals_dist=getattr(args, "decimals_dist", 2),
            decimals_angle=getattr(args, "decimals_angle", 2),
            order=args.order if args.command in ("encode", "roundtrip-check") else "canonical-locality",
            tokenize=getattr(args, "tokenize", "whole"),
            workers=args.workers,
            seed=args.seed,
        )
        if args.command == "encode":
            edges = [float(e) for e in args.edges.split(",")] if args.edges else None
            return cmd_encode(cfg, args.prop_name, edges, args.buckets)
        if args.command == "decode":
            return cmd_decode(cfg)
        if args.command == "roundtrip-check":
            return cmd_roundtrip_check(cfg)
        if args.command == "build-vocab":
            return cmd_build_vocab(cfg, args.cap)
        if args.command == "train":
            return cmd_train(cfg, args.order, args.backoff, args.vocab, args.cap)
        if args.command == "sample":
            sampler = lmgen.SamplerConfig(args.top_k, args.temperature, args.max_len, args.seed)
            return cmd_sample(cfg, args.model, args.count, sampler, args.condition, args.max_invalid)
        if args.command == "eval":
            return cmd_eval(cfg, args.reference, args.train, args.json_out)
    except (UsageError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
