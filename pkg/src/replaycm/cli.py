"""Batch command-line front-end for the replay-countermeasure pipeline."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import features as feat
from . import metrics, replay_sim, scoring, training
from .config import load_config
from .errors import DataError, ParameterError, ReplayCmError
from .features import FrameSpec, MgdParams, read_gram, reduce_gram, write_gram
from .model import ResNetConfig, build_resnet, load_checkpoint, save_checkpoint, saliency_map
from .replay_sim import read_protocol
from .scoring import read_score_file, write_score_file
from .training import FeatureStore, TrainConfig, train, write_feature_manifest


def _frame_spec(cfg: dict) -> FrameSpec:
    return FrameSpec.from_ms(
        cfg["audio"]["sample_rate"],
        frame_ms=cfg["stft"]["frame_ms"],
        hop_ms=cfg["stft"]["hop_ms"],
        window=cfg["stft"]["window"],
        n_fft=cfg["stft"]["n_fft"],
    )


def cmd_simulate(args) -> int:
    replay_sim.generate_corpus(
        args.out,
        n_sources=args.sources,
        utt_per_source=args.utts,
        seed=args.seed,
        sample_rate=load_config(args.config)["audio"]["sample_rate"],
    )
    print(f"corpus written to {args.out}")
    return 0


def _extract_one(entry, wav_dir: Path, out_dir: Path, kind: str, cfg: dict,
                 mgd_params: MgdParams, bin_stride: int, frame_stride: int) -> tuple:
    from .audio_io import read_wav

    w = read_wav(wav_dir / f"{entry.utt_id}.wav")
    w.utt_id = entry.utt_id
    if kind == "stft":
        gram = feat.stft_gram(w, _frame_spec(cfg))
    elif kind == "mgd":
        gram = feat.mgd_gram(w, _frame_spec(cfg), mgd_params)
    elif kind == "gd":
        gram = feat.gd_gram(w, _frame_spec(cfg))
    elif kind == "cqt":
        gram = feat.cqt_gram(w, hop=cfg["cqt"]["hop"], n_octaves=cfg["cqt"]["n_octaves"],
                             bins_per_octave=cfg["cqt"]["bins_per_octave"])
    else:
        raise ParameterError(f"unknown feature kind {kind!r}")
    gram = reduce_gram(gram, bin_stride, frame_stride)
    filename = f"{entry.utt_id}.fgram"
    write_gram(gram, out_dir / filename)
    return entry.utt_id, filename


def cmd_extract(args) -> int:
    cfg = load_config(args.config)
    if args.rho is not None:
        cfg["mgd"]["rho"] = args.rho
    if args.lam is not None:
        cfg["mgd"]["lambda"] = args.lam
    mgd_params = MgdParams(rho=cfg["mgd"]["rho"], lam=cfg["mgd"]["lambda"],
                           lifter_len=cfg["mgd"]["lifter_len"])
    entries = read_protocol(args.protocol)
    wav_dir = Path(args.wav_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry):
        return _extract_one(entry, wav_dir, out_dir, args.feature, cfg, mgd_params,
                            args.bin_stride, args.frame_stride)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]
    write_feature_manifest(out_dir, dict(results))
    print(f"extracted {len(results)} {args.feature} grams to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    entries_train = read_protocol(args.protocol_train)
    entries_dev = read_protocol(args.protocol_dev)
    store = FeatureStore(args.feature_dir)
    probe = store.load(entries_train[0].utt_id)
    block_counts = tuple(int(b) for b in str(cfg["model"]["block_counts"]).split(","))
    model_cfg = ResNetConfig(
        block_counts=block_counts,
        base_channels=cfg["model"]["base_channels"],
        fc_width=cfg["model"]["fc_width"],
        input_bins=probe.shape[0],
        input_frames=probe.shape[1],
        scale=cfg["model"]["scale"],
    )
    tcfg = TrainConfig(
        lr=cfg["train"]["lr"],
        betas=(cfg["train"]["beta1"], cfg["train"]["beta2"]),
        weight_decay=cfg["train"]["weight_decay"],
        plateau_patience=cfg["train"]["plateau_patience"],
        plateau_factor=cfg["train"]["plateau_factor"],
        batch_size=cfg["train"]["batch_size"],
        max_epochs=cfg["train"]["max_epochs"],
        seed=cfg["train"]["seed"],
        objective=args.objective,
        gamma=args.gamma if args.gamma is not None else cfg["train"]["gamma"],
        alpha=cfg["train"]["alpha"] if cfg["train"]["alpha"] == "auto"
        else tuple(float(a) for a in str(cfg["train"]["alpha"]).split(",")),
    )
    model = build_resnet(model_cfg, seed=tcfg.seed)
    result = train(model, entries_train, entries_dev, store, tcfg,
                   log_path=str(args.out) + ".log")
    save_checkpoint(args.out, model, extra={"objective": tcfg.objective,
                                            "best_dev_eer": result.best_dev_eer,
                                            "best_epoch": result.best_epoch})
    print(f"best dev EER {result.best_dev_eer:.6f} at epoch {result.best_epoch}; "
          f"checkpoint {args.out}")
    return 0


def cmd_score(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    entries = read_protocol(args.protocol)
    store = FeatureStore(args.feature_dir)
    from .model import score_batch

    scores = {}
    batch = 32
    for start in range(0, len(entries), batch):
        chunk = entries[start : start + batch]
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                grams = list(pool.map(store.load, [e.utt_id for e in chunk]))
            grams = np.stack(grams)
        else:
            grams = store.load_batch([e.utt_id for e in chunk])
        for e, s in zip(chunk, score_batch(model, grams)):
            scores[e.utt_id] = float(s)
    write_score_file(scores, args.out)
    print(f"scored {len(scores)} utterances to {args.out}")
    return 0


def cmd_fuse(args) -> int:
    score_sets = [read_score_file(p) for p in args.scores]
    if args.method == "mean":
        fused = scoring.mean_fuse(score_sets)
    else:
        if not args.dev_scores or not args.dev_protocol:
            raise ParameterError("lr fusion requires --dev-scores and --dev-protocol")
        if len(args.dev_scores) != len(args.scores):
            raise ParameterError(
                f"got {len(args.scores)} eval but {len(args.dev_scores)} dev score files"
            )
        dev_sets = [read_score_file(p) for p in args.dev_scores]
        labels = {e.utt_id: e.label for e in read_protocol(args.dev_protocol)}
        model = scoring.lr_fuse_train(dev_sets, labels)
        fused = model.fuse(score_sets)
    write_score_file(fused, args.out)
    print(f"fused {len(args.scores)} systems ({args.method}) to {args.out}")
    return 0


def _labeled_records(score_path, protocol_path):
    scores = read_score_file(score_path)
    entries = read_protocol(protocol_path)
    missing = [e.utt_id for e in entries if e.utt_id not in scores]
    if missing:
        raise DataError(f"scores missing for {len(missing)} utterance(s): {missing[:5]}")
    return [
        scoring.ScoreRecord(e.utt_id, scores[e.utt_id], e.label, e.attack_code)
        for e in entries
    ]


def _tdcf_params(config_path) -> metrics.TdcfParams:
    cfg = load_config(config_path)
    return metrics.TdcfParams(**cfg["tdcf"])


def cmd_evaluate(args) -> int:
    records = _labeled_records(args.scores, args.protocol)
    eer_val, _ = metrics.eer(records)
    tdcf_val, _ = metrics.min_tdcf_norm(records, _tdcf_params(args.tdcf_config))
    print(f"eer={eer_val:.6f} min_tdcf={tdcf_val:.6f}")
    return 0


def cmd_breakdown(args) -> int:
    records = _labeled_records(args.scores, args.protocol)
    rows = metrics.breakdown(records, _tdcf_params(args.tdcf_config))
    sys.stdout.write(metrics.format_breakdown(rows))
    return 0


def cmd_saliency(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    gram = read_gram(args.feature)
    smap = saliency_map(model, gram)
    out = feat.FeatureGram(gram.kind, smap.astype(np.float32), gram.utt_id)
    write_gram(out, args.out)
    print(f"saliency matrix {smap.shape[0]}x{smap.shape[1]} written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replaycm",
        description="Replay-attack countermeasure pipeline: simulate, extract, "
        "train, score, fuse, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic replay corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sources", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="extract feature grams for a protocol")
    p.add_argument("--feature", required=True, choices=("stft", "mgd", "cqt", "gd"))
    p.add_argument("--protocol", required=True)
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--bin-stride", type=int, default=1)
    p.add_argument("--frame-stride", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a countermeasure model")
    p.add_argument("--feature-dir", required=True)
    p.add_argument("--protocol-train", required=True)
    p.add_argument("--protocol-dev", required=True)
    p.add_argument("--objective", required=True, choices=("bce", "bfl"))
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a protocol with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--feature-dir", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", help="fuse score files (mean or logistic regression)")
    p.add_argument("--method", required=True, choices=("mean", "lr"))
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--dev-scores", nargs="+", default=None)
    p.add_argument("--dev-protocol", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="EER and min t-DCF for a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--tdcf-config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("breakdown", help="per-attack-code metric table")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--tdcf-config", default=None)
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("saliency", help="|input gradient| for one feature gram")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ReplayCmError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
