"""Command-line client for the mapping service.

Subcommands post to the FastAPI app, in process by default or against a
remote server via --server. Exit codes: 0 success, 2 configuration error,
3 data-format error.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from .harness import parse_config_file

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # no server given: drive the ASGI app in process through the same
    # HTTP surface a remote client would use
    from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _post(args: argparse.Namespace, path: str, payload: dict) -> int:
    try:
        with _client(args.server) as client:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if resp.status_code >= 400:
        return _report_error(resp)
    print(json.dumps(resp.json(), indent=2))
    return EXIT_OK


def _report_error(resp: httpx.Response) -> int:
    try:
        detail = resp.json().get("detail")
    except ValueError:
        detail = resp.text
    if isinstance(detail, dict):
        code = detail.get("code", "config")
        message = detail.get("detail", "")
    else:
        code = "config"
        message = str(detail)
    print(f"error ({code}): {message}", file=sys.stderr)
    return EXIT_DATA if code == "data" else EXIT_CONFIG


# mergeable config-file keys: dest -> (type, default). A flag set to a
# non-default value on the command line always wins over the file.
CONFIG_KEYS: dict[str, tuple[type, object]] = {
    "descriptors": (str, None),
    "features": (str, None),
    "gt": (str, None),
    "out": (str, None),
    "tnn": (float, None),
    "tnn_values": (str, None),
    "tllc": (float, 0.8),
    "tinliers": (int, 30),
    "temporal_mask": (int, 20),
    "margin": (int, 10),
    "tci": (int, 6),
    "mode": (str, "normal"),
    "seed": (int, 0),
    "legacy_evolution": (bool, False),
    "dump_beliefs": (bool, False),
    "workers": (int, None),
}


def _merge_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Layer defaults, config-file entries, then explicit CLI flags.

    Mergeable flags parse with SUPPRESS defaults, so absence from the
    namespace means the flag was not given and the file may fill it.
    """
    file_values: dict[str, object] = {}
    if getattr(args, "config", None):
        for key, raw in parse_config_file(args.config).items():
            if key not in CONFIG_KEYS:
                continue
            typ, _ = CONFIG_KEYS[key]
            if typ is bool:
                file_values[key] = raw.lower() in ("1", "true", "yes", "on")
            elif typ is int:
                file_values[key] = int(raw)
            elif typ is float:
                file_values[key] = float(raw)
            else:
                file_values[key] = raw
    for key, (_, default) in CONFIG_KEYS.items():
        if not hasattr(args, key):
            setattr(args, key, file_values.get(key, default))


def _map_payload(args: argparse.Namespace) -> dict:
    return {
        "t_nn": args.tnn,
        "t_llc": args.tllc,
        "t_inliers": args.tinliers,
        "temporal_mask": args.temporal_mask,
        "margin_m": args.margin,
        "t_ci": args.tci,
    }


def _add_common_run_flags(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS  # absent = may come from the config file
    p.add_argument("--descriptors", default=s, help="GDSC descriptor file")
    p.add_argument("--features", default=s, help="LFEA local-feature file")
    p.add_argument("--gt", default=s, help="ground-truth loops text file")
    p.add_argument("--out", default=s, help="output directory")
    p.add_argument("--tnn", type=float, default=s, help="aggregation threshold")
    p.add_argument("--tllc", type=float, default=s, help="location loop-closure threshold")
    p.add_argument("--tinliers", type=int, default=s, help="verification inlier gate")
    p.add_argument("--temporal-mask", dest="temporal_mask", type=int, default=s)
    p.add_argument("--margin", type=int, default=s, help="true-positive frame margin")
    p.add_argument("--tci", type=int, default=s, help="continuity size threshold")
    p.add_argument("--mode", default=s,
                   choices=["normal", "oracle-locations", "flat-brute-force"])
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--legacy-evolution", dest="legacy_evolution", action="store_true",
                   default=s, help="use the uncorrected belief evolution model")


def _require(args: argparse.Namespace, names: list[str]) -> int | None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join(f"--{n.replace('_', '-')}" for n in missing)
        print(f"error (config): missing required flags: {flags}", file=sys.stderr)
        return EXIT_CONFIG
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiertopo",
        description="Hierarchical topological mapping experiment harness",
    )
    parser.add_argument("--server", default=None,
                        help="remote service URL (default: run in process)")
    parser.add_argument("--config", default=None,
                        help="key = value config file; explicit flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="replay one sequence through the map engine")
    _add_common_run_flags(p_run)
    p_run.add_argument("--dump-beliefs", dest="dump_beliefs", action="store_true",
                       default=argparse.SUPPRESS,
                       help="write per-frame belief vectors to CSV")

    p_sweep = sub.add_parser("sweep", help="one run per aggregation-threshold value")
    _add_common_run_flags(p_sweep)
    p_sweep.add_argument("--tnn-values", dest="tnn_values", default=argparse.SUPPRESS,
                         help="comma-separated t_nn list (at least two)")
    p_sweep.add_argument("--workers", type=int, default=argparse.SUPPRESS)

    p_bench = sub.add_parser("bench", help="descriptor compute-time benchmark")
    p_bench.add_argument("--extractor", required=True, choices=["phog", "gdsc"])
    p_bench.add_argument("--images", default=None, help="PGM directory for phog")
    p_bench.add_argument("--descriptors", default=None, help="GDSC file for the loader")
    p_bench.add_argument("--warmups", type=int, default=3)
    p_bench.add_argument("--repeats", type=int, default=10)

    p_dm = sub.add_parser("distmat", help="export a pairwise distance matrix")
    p_dm.add_argument("--descriptors", required=True)
    p_dm.add_argument("--out", required=True, help="output prefix (.f32/.svg)")
    p_dm.add_argument("--force", action="store_true", default=False)
    p_dm.add_argument("--max-n", dest="max_n", type=int, default=5000)

    p_synth = sub.add_parser("synth", help="generate a synthetic world")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--n-frames", dest="n_frames", type=int, default=400)
    p_synth.add_argument("--dim", type=int, default=16)
    p_synth.add_argument("--n-regions", dest="n_regions", type=int, default=2)
    p_synth.add_argument("--separation", type=float, default=10.0)
    p_synth.add_argument("--spread", type=float, default=0.5)
    p_synth.add_argument("--route", default=None,
                         help="region:count pairs, e.g. 0:150,1:150,0:100")
    p_synth.add_argument("--step-sigma", dest="step_sigma", type=float, default=0.1)
    p_synth.add_argument("--jump-prob", dest="jump_prob", type=float, default=0.0)
    p_synth.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.01)
    p_synth.add_argument("--features-per-image", dest="features_per_image",
                         type=int, default=48)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--chi-squared", dest="chi_squared", action="store_true",
                         default=False,
                         help="also write a non-negative chi-squared variant")

    p_phog = sub.add_parser("phog", help="extract PHOG descriptors from PGM images")
    p_phog.add_argument("--images", required=True)
    p_phog.add_argument("--out", required=True)
    p_phog.add_argument("--bins", type=int, default=60)
    p_phog.add_argument("--levels", type=int, default=2)
    p_phog.add_argument("--angle-span", dest="angle_span", type=int, default=360,
                        choices=[180, 360])

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _merge_config_file(args, parser)

    if args.command == "run":
        bad = _require(args, ["descriptors", "features", "gt", "out", "tnn"])
        if bad is not None:
            return bad
        payload = {
            "descriptors": args.descriptors,
            "features": args.features,
            "gt": args.gt,
            "out": args.out,
            "map": _map_payload(args),
            "mode": args.mode,
            "seed": args.seed,
            "legacy_evolution": args.legacy_evolution,
            "dump_beliefs": args.dump_beliefs,
        }
        return _post(args, "/experiments/run", payload)

    if args.command == "sweep":
        bad = _require(args, ["descriptors", "features", "gt", "out", "tnn_values"])
        if bad is not None:
            return bad
        try:
            values = [float(v) for v in str(args.tnn_values).split(",") if v.strip()]
        except ValueError:
            print("error (config): --tnn-values must be a comma-separated float list",
                  file=sys.stderr)
            return EXIT_CONFIG
        payload = {
            "descriptors": args.descriptors,
            "features": args.features,
            "gt": args.gt,
            "out": args.out,
            "map": {**_map_payload(args), "t_nn": values[0] if values else 1.0},
            "t_nn_values": values,
            "mode": args.mode,
            "seed": args.seed,
            "legacy_evolution": args.legacy_evolution,
            "workers": args.workers,
        }
        return _post(args, "/experiments/sweep", payload)

    if args.command == "bench":
        payload = {
            "extractor": args.extractor,
            "images": args.images,
            "descriptors": args.descriptors,
            "warmups": args.warmups,
            "repeats": args.repeats,
        }
        return _post(args, "/bench", payload)

    if args.command == "distmat":
        payload = {
            "descriptors": args.descriptors,
            "out": args.out,
            "force": args.force,
            "max_n": args.max_n,
        }
        return _post(args, "/distmat", payload)

    if args.command == "synth":
        if args.route:
            try:
                route = [
                    (int(part.split(":")[0]), int(part.split(":")[1]))
                    for part in args.route.split(",")
                ]
            except (ValueError, IndexError):
                print("error (config): --route must be region:count pairs",
                      file=sys.stderr)
                return EXIT_CONFIG
        else:
            per = args.n_frames // (args.n_regions + 1)
            route = [(i, per) for i in range(args.n_regions)]
            route.append((0, args.n_frames - per * args.n_regions))
        total = sum(c for _, c in route)
        if total != args.n_frames:
            args.n_frames = total
        centers = _simplex_centers(args.n_regions, args.dim, args.separation)
        payload = {
            "out": args.out,
            "n_frames": args.n_frames,
            "dim": args.dim,
            "regions": [{"center": c, "spread": args.spread} for c in centers],
            "route": route,
            "step_sigma": args.step_sigma,
            "jump_prob": args.jump_prob,
            "noise_sigma": args.noise_sigma,
            "seed": args.seed,
            "features_per_image": args.features_per_image,
            "chi_squared": args.chi_squared,
        }
        return _post(args, "/synth", payload)

    if args.command == "phog":
        payload = {
            "images": args.images,
            "out": args.out,
            "bins": args.bins,
            "levels": args.levels,
            "angle_span": args.angle_span,
        }
        return _post(args, "/extract/phog", payload)

    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK

    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


def _simplex_centers(n_regions: int, dim: int, separation: float) -> list[list[float]]:
    from .synthetic import simplex_centers

    return [c.tolist() for c in simplex_centers(n_regions, dim, separation)]


if __name__ == "__main__":
    sys.exit(main())
