"""Command-line front door: explain an image, list conv layers, build fixtures.

Exit codes: 0 success, 1 usage error, 2 data or model error. User mistakes are
reported as one-line stderr messages, never tracebacks.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import imageio, modelio, saliency
from .errors import SmoothCamError
from .gradients import ScoreMode
from .network import forward, list_conv_layers
from .saliency import NeuronSelection, SaliencyRequest
from .tensor import as_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_SCORE_FLAGS = {"logit": "raw-logit", "exp": "exp-logit"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors must exit 1
        raise _UsageError(message)


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "explain":
            _cmd_explain(args)
        elif args.command == "list-layers":
            _cmd_list_layers(args)
        else:
            _cmd_make_fixture(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SmoothCamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="smoothcam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explain", help="compute a saliency map for one image")
    ex.add_argument("--model", required=True, help="manifest JSON path")
    ex.add_argument("--weights", required=True, help="weight blob path")
    ex.add_argument("--image", required=True, help="input image (binary PPM)")
    ex.add_argument("--method", required=True, choices=saliency.METHODS)
    ex.add_argument("--class", dest="class_spec", default="auto",
                    help="class index, or 'auto' for the argmax class")
    ex.add_argument("--layer", default=None, help="conv layer to visualize (CAM methods)")
    ex.add_argument("--samples", type=int, default=25, help="noise sample count n")
    ex.add_argument("--sigma", type=float, default=0.15,
                    help="noise std as a fraction of the input dynamic range")
    ex.add_argument("--filters", default=None, help="feature map indices, e.g. 0,2,5")
    ex.add_argument("--neurons", default=None, help="neuron coordinates, e.g. 3:5,5:5")
    ex.add_argument("--region-box", dest="region_box", default=None,
                    help="inclusive neuron region top:left:bottom:right")
    ex.add_argument("--activation-source", dest="activation_source", default="original",
                    choices=saliency.ACTIVATION_SOURCES)
    ex.add_argument("--score", default="exp", choices=sorted(_SCORE_FLAGS))
    ex.add_argument("--seed", type=int, default=0, help="master seed (non-negative)")
    ex.add_argument("--blend", type=float, default=0.5, help="overlay blend in [0,1]")
    ex.add_argument("--out", required=True, help="output directory")

    ls = sub.add_parser("list-layers", help="print the model's conv layer names")
    ls.add_argument("--model", required=True)
    ls.add_argument("--weights", required=True)

    mk = sub.add_parser("make-fixture", help="write a fixture model to disk")
    mk.add_argument("--kind", required=True, choices=["random", "detector"])
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--classes", type=int, default=10, help="class count for the random kind")
    mk.add_argument("--model", required=True, help="manifest output path")
    mk.add_argument("--weights", required=True, help="blob output path")
    mk.add_argument("--scene", default=None,
                    help="optionally write a matching demo input image (PPM)")
    return parser


def _cmd_explain(args) -> None:
    request, blend = _parse_request(args)
    model = modelio.load_model(args.model, args.weights)
    image = imageio.read_ppm(args.image)
    x = imageio.to_input_tensor(image, model.input_shape)

    if request.method in saliency.CAM_METHODS:
        _check_layer(model, args.layer)

    if request.filters is not None:
        jobs = [(f"_f{k}", _with_filters(request, (k,))) for k in request.filters]
    else:
        jobs = [("", request)]
    results = [(suffix, saliency.run(model, x, req)) for suffix, req in jobs]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = _meta_header(args, results[0][1].meta["class"])
    for suffix, smap in results:
        imageio.write_ppm(imageio.heat_image(smap.display), out_dir / f"heatmap{suffix}.ppm")
        imageio.write_ppm(imageio.overlay(image, smap.display, blend),
                          out_dir / f"overlay{suffix}.ppm")
        imageio.write_map_csv(smap.display, out_dir / f"map{suffix}.csv", header=header)

    chosen = results[0][1].meta["class"]
    trace = forward(model, x)
    logit = float(trace.logits[chosen])
    score_value = logit if request.score.mode == "raw-logit" else float(np.exp(logit))
    print(f"class {chosen}")
    print(f"score {score_value:.9f}")


def _cmd_list_layers(args) -> None:
    model = modelio.load_model(args.model, args.weights)
    for name in list_conv_layers(model):
        print(name)


def _cmd_make_fixture(args) -> None:
    if args.seed < 0:
        raise _UsageError("--seed must be non-negative")
    model = modelio.build_fixture(args.kind, seed=args.seed, class_count=args.classes)
    modelio.save_model(model, args.model, args.weights)
    if args.scene is not None:
        if args.kind == "detector":
            scene = modelio.detector_scene("top-left")
        else:
            rng = np.random.default_rng(args.seed)
            scene = rng.random(model.input_shape)
        gray = np.floor(255.0 * np.clip(as_tensor(scene)[0], 0.0, 1.0) + 0.5).astype(np.uint8)
        pixels = np.repeat(gray[:, :, None], 3, axis=2).tobytes()
        imageio.write_ppm(
            imageio.RgbImage(width=gray.shape[1], height=gray.shape[0], pixels=pixels),
            args.scene,
        )


def _parse_request(args) -> tuple[SaliencyRequest, float]:
    if args.class_spec == "auto":
        class_index = None
    else:
        try:
            class_index = int(args.class_spec)
        except ValueError:
            raise _UsageError(f"--class must be an integer or 'auto', got '{args.class_spec}'")
    if args.samples < 1:
        raise _UsageError("--samples must be >= 1")
    if not 0.0 <= args.sigma < 1.0:
        raise _UsageError("--sigma must be in [0, 1)")
    if args.seed < 0:
        raise _UsageError("--seed must be non-negative")
    if not 0.0 <= args.blend <= 1.0:
        raise _UsageError("--blend must be in [0, 1]")
    if args.method in saliency.CAM_METHODS and args.layer is None:
        raise _UsageError(f"--layer is required for method '{args.method}'")
    if args.neurons is not None and args.region_box is not None:
        raise _UsageError("--neurons and --region-box are mutually exclusive")

    filters = None
    if args.filters is not None:
        filters = tuple(_parse_int(tok, "--filters") for tok in _split(args.filters, "--filters"))
    neurons = None
    if args.neurons is not None:
        coords = []
        for tok in _split(args.neurons, "--neurons"):
            parts = tok.split(":")
            if len(parts) != 2:
                raise _UsageError(f"--neurons entries must be row:col, got '{tok}'")
            coords.append((_parse_int(parts[0], "--neurons"), _parse_int(parts[1], "--neurons")))
        neurons = NeuronSelection(coords=tuple(coords), region=False)
    elif args.region_box is not None:
        parts = args.region_box.split(":")
        if len(parts) != 4:
            raise _UsageError("--region-box must be top:left:bottom:right")
        box = tuple(_parse_int(p, "--region-box") for p in parts)
        neurons = NeuronSelection(box=box, region=True)

    request = SaliencyRequest(
        method=args.method,
        score=ScoreMode(_SCORE_FLAGS[args.score], class_index),
        layer=args.layer,
        n=args.samples,
        sigma_rel=args.sigma,
        filters=filters,
        neurons=neurons,
        activation_source=args.activation_source,
        seed=args.seed,
    )
    return request, args.blend


def _with_filters(request: SaliencyRequest, filters: tuple[int, ...]) -> SaliencyRequest:
    from dataclasses import replace

    return replace(request, filters=filters)


def _check_layer(model, layer: str) -> None:
    names = {spec.name for spec in model.layers}
    conv_names = list_conv_layers(model)
    listing = ", ".join(conv_names) if conv_names else "(none)"
    if layer not in names:
        raise SmoothCamError(f"unknown layer: {layer} (valid conv layers: {listing})")
    if layer not in conv_names:
        raise SmoothCamError(f"layer '{layer}' is not a conv layer (valid conv layers: {listing})")


def _meta_header(args, chosen_class: int) -> str:
    fields = [
        ("method", args.method),
        ("class", args.class_spec),
        ("chosen-class", chosen_class),
        ("layer", args.layer or "-"),
        ("samples", args.samples),
        ("sigma", args.sigma),
        ("filters", args.filters or "-"),
        ("neurons", args.neurons or "-"),
        ("region-box", args.region_box or "-"),
        ("activation-source", args.activation_source),
        ("score", args.score),
        ("seed", args.seed),
        ("blend", args.blend),
    ]
    return " ".join(f"{key}={value}" for key, value in fields)


def _split(raw: str, flag: str) -> list[str]:
    toks = [tok for tok in raw.split(",") if tok != ""]
    if not toks:
        raise _UsageError(f"{flag} must list at least one entry")
    return toks


def _parse_int(tok: str, flag: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise _UsageError(f"{flag} expects integers, got '{tok}'")
