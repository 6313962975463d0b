"""Command-line interface: ``spritediff <command> ...`` or ``python -m spritediff``.

Configuration precedence for every command is flag > ``--config`` file >
built-in preset, and the resolved values are written into each output
manifest. Errors end the process with one line ``error: <category>: ...``
on stderr and a category-specific exit code.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import selftest
from .checkpoint import Checkpoint, load_model, optimizer_state
from .errors import CheckpointError, ConfigError, ContractError, InvalidValueError, ShapeError
from .evaluation import ABLATION_BETAS, ABLATION_OMEGAS, ablation_grid, format_table, score_images
from .guidance import PRESETS, GuidanceConfig, Reference, SamplerConfig, sample
from .metrics import estimate_foreground
from .ppm import read_ppm, write_ppm
from .presets import DATASET_SEED, DATASET_SIZE, HELD_OUT, MODEL_PRESETS
from .sprites import Caption, Sample, Sprite, gen_dataset, parse_caption, render, subject_sprite
from .trainer import (
    TRAIN_PRESETS,
    RegularSet,
    TrainConfig,
    TrainLog,
    finetune_subject,
    generate_regular_set,
    pretrain_base,
    pretrain_subject_encoder,
)

DATA_ENV = "SPRITEDIFF_DATA"

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "corrupt-checkpoint": 4,
    "config": 5,
    "contract": 6,
    "numeric": 7,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config resolution ----------------------------------------------------------------


def _read_config(path: str | None, command: str) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except ValueError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    # either a flat object or one section per command
    section = data.get(command, data)
    if not isinstance(section, dict):
        raise ConfigError(f"config section {command!r} must be a JSON object")
    return {k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)}


def resolve(preset: dict, args: argparse.Namespace, command: str, keys) -> dict:
    """Merge preset < config file < explicit flags for the given keys."""
    out = {k: preset.get(k) for k in keys}
    file_cfg = _read_config(getattr(args, "config", None), command)
    unknown = set(file_cfg) - set(keys)
    if unknown:
        raise ConfigError(f"unknown keys in config file for {command!r}: {sorted(unknown)}")
    out.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _train_log(args) -> TrainLog:
    sinks = []
    if args.log:
        fh = open(args.log, "w")
        sinks.append(lambda line: (fh.write(line + "\n"), fh.flush()))
    every = max(1, args.log_every)

    def sink(line):
        for s in sinks:
            s(line)
        rec = json.loads(line)
        if rec["step"] % every == 0:
            print(line, file=sys.stderr, flush=True)

    return TrainLog(sink=sink)


# -- datasets -------------------------------------------------------------------------


def _sprite_dict(sp: Sprite) -> dict:
    return {k: getattr(sp, k) for k in ("shape", "color", "detail", "background", "bg_type", "cx", "cy", "size", "angle")}


def write_dataset(samples: list[Sample], out: Path, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for i, s in enumerate(samples):
        img, mask = f"img_{i:05d}.ppm", f"mask_{i:05d}.ppm"
        write_ppm(out / img, s.image)
        write_ppm(out / mask, np.repeat(s.mask * 2.0 - 1.0, 3, axis=0))
        items.append({"image": img, "mask": mask, "caption": s.caption.text(), "sprite": _sprite_dict(s.sprite)})
    _write_json(out / "manifest.json", {"command": "make-dataset", "config": resolved, "items": items})


def read_mask(path) -> np.ndarray:
    return (read_ppm(path).mean(axis=0, keepdims=True) > 0).astype(np.float64)


def read_dataset(path: Path) -> list[Sample]:
    man = path / "manifest.json"
    if not man.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {man}")
    out = []
    for it in json.loads(man.read_text())["items"]:
        sp = Sprite(**it["sprite"])
        # re-render from parameters: the files are quantized to 8 bits
        img, mask = render(sp)
        out.append(Sample(img, mask, parse_caption(it["caption"]), sp))
    return out


def _dataset(args) -> list[Sample]:
    data_dir = args.data or os.environ.get(DATA_ENV)
    if data_dir:
        return read_dataset(Path(data_dir))
    return gen_dataset(args.data_size, args.data_seed, exclude=HELD_OUT)


# -- references -----------------------------------------------------------------------


def load_reference(args, ckpt: Checkpoint | None = None) -> Reference | None:
    if getattr(args, "ref_image", None):
        img = read_ppm(args.ref_image)
        mask = read_mask(args.ref_mask) if args.ref_mask else estimate_foreground(img)[0]
        if not args.ref_caption:
            raise ConfigError("--ref-caption is required with --ref-image")
        return Reference(img, mask, parse_caption(args.ref_caption).ids())
    if ckpt is not None and "reference.image" in ckpt.tensors:
        t = ckpt.tensors
        return Reference(t["reference.image"], t["reference.mask"], t["reference.ids"].astype(np.int64))
    return None


def reference_tensors(ref: Reference) -> dict[str, np.ndarray]:
    return {"reference.image": ref.image, "reference.mask": ref.mask, "reference.ids": ref.ids.astype(np.float64)}


def _class_word(ref: Reference) -> str:
    return parse_caption(ref.ids).shape


# -- commands -------------------------------------------------------------------------


def cmd_make_dataset(args) -> int:
    keys = ["n", "seed", "exclude_held_out"]
    r = resolve({"n": DATASET_SIZE, "seed": DATASET_SEED, "exclude_held_out": True}, args, "make-dataset", keys)
    out = Path(args.out or os.environ.get(DATA_ENV) or "")
    if not str(out):
        raise ConfigError(f"give --out or set {DATA_ENV}")
    samples = gen_dataset(int(r["n"]), int(r["seed"]), exclude=HELD_OUT if r["exclude_held_out"] else ())
    write_dataset(samples, out, r)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_render(args) -> int:
    identity = tuple(args.identity.split(","))
    if len(identity) != 3:
        raise ConfigError("--identity must be shape,color,detail")
    sp = subject_sprite(identity, args.seed, args.background, args.bg_type)
    img, mask = render(sp)
    out = Path(args.out)
    write_ppm(out, img)
    mask_path = out.with_name(out.stem + ".mask.ppm")
    write_ppm(mask_path, np.repeat(mask * 2.0 - 1.0, 3, axis=0))
    print(json.dumps({"image": str(out), "mask": str(mask_path), "caption": Caption.of(sp, background=False).text()}))
    return 0


def _train_keys():
    return ["steps", "batch", "lr_main", "lr_token", "seed", "caption_dropout", "use_layout", "train_beta", "use_subject_encoder"]


def _train_config(stage_preset: str, args, command: str) -> tuple[TrainConfig, dict]:
    base = TRAIN_PRESETS[stage_preset].to_dict()
    r = resolve(base, args, command, _train_keys())
    cfg = TrainConfig(**{**base, **r})
    return cfg, cfg.to_dict()


def _resume_state(args):
    if not args.resume:
        return None, None
    ck = Checkpoint.load(args.resume)
    return load_model(ck), optimizer_state(ck)


def cmd_pretrain(args) -> int:
    cfg, resolved = _train_config("base", args, "pretrain")
    mc_name = args.model_preset or "ci"
    if mc_name not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {mc_name!r}")
    model, state = _resume_state(args)
    data = _dataset(args)
    res = pretrain_base(data, cfg, model=model, model_cfg=MODEL_PRESETS[mc_name], resume=state, log=_train_log(args))
    meta = {"command": "pretrain", "config": {**resolved, "model_preset": mc_name, "data_size": len(data)}}
    res.checkpoint(cfg, meta).save(args.out)
    print(f"saved {args.out}")
    return 0


def cmd_train_se(args) -> int:
    cfg, resolved = _train_config("se_pretrain", args, "train-se")
    if args.resume:
        model, state = _resume_state(args)
    else:
        model, state = load_model(Checkpoint.load(args.base)), None
    data = _dataset(args)
    res = pretrain_subject_encoder(data, model, cfg, resume=state, log=_train_log(args))
    meta = {"command": "train-se", "config": resolved, "frozen_digest": list(res.frozen_digest)}
    res.checkpoint(cfg, meta).save(args.out)
    print(f"saved {args.out}")
    return 0


def _sampler_keys():
    return ["steps", "beta", "omega_ref", "omega_r", "omega_c", "p_r", "dt", "dt_prime", "mask", "use_subject_encoder", "use_reference_attention"]


def sampler_from(r: dict) -> SamplerConfig:
    g = GuidanceConfig(
        omega_r=float(r["omega_r"]),
        omega_c=float(r["omega_c"]),
        p_r=float(r["p_r"]),
        dt_minus=int(r["dt"]),
        dt_plus=int(r["dt_prime"]),
    )
    return SamplerConfig(
        g,
        steps=int(r["steps"]),
        beta=float(r["beta"]),
        omega_ref=float(r["omega_ref"]),
        use_subject_encoder=bool(r["use_subject_encoder"]),
        use_reference_attention=bool(r["use_reference_attention"]),
        use_mask=bool(r["mask"]),
    )


def _sampler_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown sampler preset {name!r}; have {sorted(PRESETS)}")
    d = SamplerConfig(**PRESETS[name])
    g = d.guidance
    return {
        "steps": d.steps,
        "beta": d.beta,
        "omega_ref": d.omega_ref,
        "omega_r": g.omega_r,
        "omega_c": g.omega_c,
        "p_r": g.p_r,
        "dt": g.dt_minus,
        "dt_prime": g.dt_plus,
        "mask": d.use_mask,
        "use_subject_encoder": d.use_subject_encoder,
        "use_reference_attention": d.use_reference_attention,
    }


def _resolve_sampler(args, command: str, extra_keys=()) -> tuple[SamplerConfig, dict]:
    preset = _sampler_preset(args.preset)
    r = resolve(preset, args, command, _sampler_keys() + list(extra_keys))
    return sampler_from(r), {**r, "preset": args.preset}


def cmd_regulars(args) -> int:
    ck = Checkpoint.load(args.ckpt)
    model = load_model(ck)
    ref = load_reference(args, ck)
    if ref is None:
        raise ConfigError("regular images need a reference (--ref-image)")
    cfg, r = _resolve_sampler(args, "regulars", ["n"])
    n = int(r["n"]) if r.get("n") is not None else 32
    reg = generate_regular_set(ref, _class_word(ref), model, n=n, sampler=cfg, seed=args.seed)
    meta = {"command": "regulars", "config": {**r, "n": n, "seed": args.seed}, "class_word": _class_word(ref)}
    Checkpoint("regulars", meta, {**reg.to_tensors(), **reference_tensors(ref)}).save(args.out)
    if args.image_dir:
        d = Path(args.image_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, im in enumerate(reg.images):
            write_ppm(d / f"regular_{i:03d}.ppm", im)
    print(f"saved {n} regular images to {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg, resolved = _train_config("finetune_long" if args.long else "finetune", args, "finetune")
    reg_ck = Checkpoint.load(args.regulars)
    regulars = RegularSet.from_tensors(reg_ck.tensors)
    ref = load_reference(args, reg_ck)
    if args.resume:
        model, state = _resume_state(args)
    else:
        model, state = load_model(Checkpoint.load(args.ckpt)), None
    res = finetune_subject(ref, _class_word(ref), regulars, model, cfg, resume=state, log=_train_log(args))
    meta = {"command": "finetune", "config": resolved, "class_word": _class_word(ref)}
    res.checkpoint(cfg, meta, reference_tensors(ref)).save(args.out)
    print(f"saved {args.out}")
    return 0


def _seeds(args) -> list[int]:
    if args.n <= 0:
        raise ConfigError("--n must be positive")
    return [args.seed + i for i in range(args.n)]


def cmd_generate(args) -> int:
    ck = Checkpoint.load(args.ckpt)
    model = load_model(ck)
    ref = None if args.no_ref else load_reference(args, ck)
    cfg, resolved = _resolve_sampler(args, "generate")
    caption = parse_caption(args.prompt)
    seeds = _seeds(args)
    images = sample(model, caption.ids(), seeds, cfg, ref)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for s, im in zip(seeds, images):
        name = f"img_{s:06d}.ppm"
        write_ppm(out / name, im)
        items.append({"image": name, "seed": s, "caption": caption.text()})
    manifest = {
        "command": "generate",
        "checkpoint": str(args.ckpt),
        "checkpoint_sha256": _sha256(args.ckpt),
        "config": {**resolved, "prompt": caption.text(), "reference": ref is not None},
        "sampler": cfg.to_dict(),
        "items": items,
    }
    if ref is not None:
        write_ppm(out / "reference.ppm", ref.image)
        write_ppm(out / "reference.mask.ppm", np.repeat(ref.mask * 2.0 - 1.0, 3, axis=0))
        manifest["reference_caption"] = parse_caption(ref.ids).text()
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(items)} images to {out}")
    return 0


def cmd_eval(args) -> int:
    d = Path(args.dir)
    man_path = d / "manifest.json"
    if not man_path.is_file():
        raise FileNotFoundError(f"manifest not found: {man_path}")
    manifest = json.loads(man_path.read_text())
    encoder, ref = None, None
    if args.ckpt:
        ck = Checkpoint.load(args.ckpt)
        encoder = load_model(ck).encoder.backbone
        ref = load_reference(args, ck)
        if ref is None and (d / "reference.ppm").is_file():
            ref = Reference(read_ppm(d / "reference.ppm"), read_mask(d / "reference.mask.ppm"), np.zeros(10, np.int64))
    per = []
    for it in manifest["items"]:
        img = read_ppm(d / it["image"])
        s = score_images(img[None], it["caption"], ref, encoder)
        per.append({"image": it["image"], **s.to_dict()})
    idents = [p["identity"] for p in per]
    result = {
        "command": "eval",
        "dir": str(d),
        "n": len(per),
        "prompt_score": float(np.mean([p["prompt"] for p in per])) if per else float("nan"),
        "identity_score": float(np.mean(idents)) if ref is not None and per else None,
        "items": per,
    }
    if ref is None:
        for p in per:
            p["identity"] = None
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    ck = Checkpoint.load(args.ckpt)
    model = load_model(ck)
    ref = load_reference(args, ck)
    if ref is None:
        raise ConfigError("ablation needs a reference (--ref-image or a fine-tuned checkpoint)")
    cfg, resolved = _resolve_sampler(args, "ablate")
    caption = parse_caption(args.prompt)
    seeds = _seeds(args)

    def show(row):
        print(f"{row['variant']}\tbeta={row['beta']:g}\tomega_ref={row['omega_ref']:g}\tidentity={row['identity']:.4f}\tprompt={row['prompt']:.4f}", file=sys.stderr, flush=True)

    rows = ablation_grid(model, ref, caption, seeds, cfg, ABLATION_BETAS, ABLATION_OMEGAS, progress=show)
    if args.no_layout_ckpt:
        other = load_model(Checkpoint.load(args.no_layout_ckpt))
        imgs = sample(other, caption.ids(), seeds, cfg, ref)
        s = score_images(imgs, caption, ref, model.encoder.backbone)
        rows.append({"variant": "se-without-layout", "beta": cfg.beta, "omega_ref": cfg.omega_ref, **s.to_dict()})
    table = format_table(rows)
    print(table)
    if args.out:
        _write_json(
            args.out,
            {
                "command": "ablate",
                "checkpoint": str(args.ckpt),
                "checkpoint_sha256": _sha256(args.ckpt),
                "config": {**resolved, "prompt": caption.text(), "seeds": seeds},
                "rows": rows,
            },
        )
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest.run() else 1


# -- parser ---------------------------------------------------------------------------


def _bool_flag(p, name: str, dest: str, help: str) -> None:
    p.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help)
    p.add_argument(f"--no-{name}", dest=dest, action="store_false", default=None)


def _add_train_flags(p) -> None:
    p.add_argument("--config", help="JSON file; values override the preset, flags override the file")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", dest="lr_main", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--caption-dropout", type=float)
    p.add_argument("--resume", help="checkpoint written by the same command")
    p.add_argument("--log", help="write line-delimited training records here")
    p.add_argument("--log-every", type=int, default=50)


def _add_data_flags(p) -> None:
    p.add_argument("--data", help=f"dataset directory from make-dataset (default: ${DATA_ENV}, else generated)")
    p.add_argument("--data-size", type=int, default=DATASET_SIZE)
    p.add_argument("--data-seed", type=int, default=DATASET_SEED)


def _add_reference_flags(p) -> None:
    p.add_argument("--ref-image", help="reference sprite (PPM)")
    p.add_argument("--ref-mask", help="foreground mask (PPM); estimated from the border when omitted")
    p.add_argument("--ref-caption", help='detailed caption of the reference, e.g. "a red star with dots"')


def _add_sampler_flags(p) -> None:
    p.add_argument("--config", help="JSON file; values override the preset, flags override the file")
    p.add_argument("--preset", default="anime", choices=sorted(PRESETS))
    p.add_argument("--steps", type=int, help="DDIM steps")
    p.add_argument("--beta", type=float, help="subject-encoder attention scale")
    p.add_argument("--omega-ref", type=float, help="reference foreground weight in self-subject-attention")
    p.add_argument("--omega-r", type=float, help="reference guidance scale")
    p.add_argument("--omega-c", type=float, help="text guidance scale")
    p.add_argument("--p-r", type=float, help="probability of the reference branch per step")
    p.add_argument("--dt", type=int, help="reference time offset of the conditional term")
    p.add_argument("--dt-prime", type=int, help="reference time offset of the unconditional term")
    _bool_flag(p, "mask", "mask", "mask the reference background in self-subject-attention")
    _bool_flag(p, "se", "use_subject_encoder", "use subject-encoder features")
    _bool_flag(p, "ssa", "use_reference_attention", "use self-subject-attention")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spritediff", description="Subject-driven sprite generation on a desk-scale diffusion model.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-dataset", help="render a sprite dataset to PPM files")
    p.add_argument("--out", help=f"output directory (default ${DATA_ENV})")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    _bool_flag(p, "exclude-held-out", "exclude_held_out", "leave out the held-out subject identities")
    p.add_argument("--config")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("render", help="render one subject sprite and its mask")
    p.add_argument("--identity", required=True, help="shape,color,detail")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background", default="gray")
    p.add_argument("--bg-type", default="solid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pretrain", help="base text-to-image pretraining")
    _add_train_flags(p)
    _add_data_flags(p)
    p.add_argument("--model-preset", choices=sorted(MODEL_PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-se", help="subject-encoder pretraining on a base checkpoint")
    _add_train_flags(p)
    _add_data_flags(p)
    p.add_argument("--base", help="base checkpoint")
    _bool_flag(p, "layout", "use_layout", "feed the target silhouette through the fixed layout channel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_se)

    p = sub.add_parser("regulars", help="generate the regular image set for a reference")
    p.add_argument("--ckpt", required=True)
    _add_reference_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--image-dir")
    p.set_defaults(func=cmd_regulars)

    p = sub.add_parser("finetune", help="subject fine-tuning with regular images and the <S*> token")
    _add_train_flags(p)
    p.add_argument("--ckpt", help="subject-encoder checkpoint")
    p.add_argument("--regulars", required=True)
    _add_reference_flags(p)
    p.add_argument("--lr-token", type=float)
    _bool_flag(p, "se", "use_subject_encoder", "use subject-encoder features while fine-tuning")
    p.add_argument("--long", action="store_true", help="use the 1200-step preset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="sample images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    _add_reference_flags(p)
    p.add_argument("--no-ref", action="store_true", help="ignore any reference stored in the checkpoint")
    _add_sampler_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="identity and prompt scores for a directory with a manifest")
    p.add_argument("dir")
    p.add_argument("--ckpt", help="checkpoint whose encoder scores identity")
    _add_reference_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="beta x omega_ref sweep plus mask-off and no-layout variants")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    _add_reference_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--no-layout-ckpt", help="checkpoint trained with --no-layout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selftest", help="run the built-in oracle and invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def _category(e: BaseException) -> str:
    if isinstance(e, UsageError):
        return "usage"
    if isinstance(e, FileNotFoundError):
        return "missing-file"
    if isinstance(e, CheckpointError):
        return "corrupt-checkpoint"
    if isinstance(e, ConfigError):
        return "config"
    if isinstance(e, (ContractError, ShapeError)):
        return "contract"
    if isinstance(e, InvalidValueError):
        return "numeric"
    raise e


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command in ("train-se",) and not (args.base or args.resume):
            raise UsageError("train-se needs --base or --resume")
        if args.command == "finetune" and not (args.ckpt or args.resume):
            raise UsageError("finetune needs --ckpt or --resume")
        return args.func(args)
    except (UsageError, FileNotFoundError, CheckpointError, ConfigError, ContractError, ShapeError, InvalidValueError) as e:
        cat = _category(e)
        msg = str(e).replace("\n", " ")
        print(f"error: {cat}: {msg}", file=sys.stderr)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
