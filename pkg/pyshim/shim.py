#!/usr/bin/env python3
"""Reference external-candidate runner.

Reads exactly one protocol-v1 request line from stdin, loads a candidate
program file, calls the entry point matching the request's evaluator kind,
and writes exactly one response line to stdout. Standard library only.

Usage:
    python3 shim.py --candidate path/to/program.py --entry construct_packing

Entry-point conventions per evaluator kind:
    circle_square   entry(n)                        -> (centers, radii[, sum])
    circle_rect     entry(n)                        -> (centers, radii, alpha[, sum])
    heilbronn       entry(n)                        -> (points[, min_area])
    k_module        entry(modules)                  -> choices dict
    function_min    entry(bounds, iterations, seed) -> (x, y)

Any candidate exception becomes a failed response (the engine scores it 0);
the shim itself always exits 0 after writing its one line.
"""

import argparse
import importlib.util
import json
import sys
import traceback

PROTO_VERSION = 1


def jsonable(value):
    """Plain-Python view of candidate output; tolerates array-likes."""
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    return value


def load_entry(candidate_path, entry_name):
    spec = importlib.util.spec_from_file_location("candidate", candidate_path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    entry = getattr(module, entry_name, None)
    if not callable(entry):
        raise AttributeError(f"no callable {entry_name!r} in {candidate_path}")
    return entry


def build_payload(kind, params, entry):
    if kind == "circle_square":
        result = entry(int(params["n"]))
        centers, radii = result[0], result[1]
        return {"centers": jsonable(centers), "radii": jsonable(radii)}
    if kind == "circle_rect":
        result = entry(int(params["n"]))
        centers, radii, alpha = result[0], result[1], result[2]
        return {"centers": jsonable(centers), "radii": jsonable(radii),
                "alpha": float(alpha)}
    if kind == "heilbronn":
        result = entry(int(params["n"]))
        points = result[0] if isinstance(result, tuple) else result
        return {"points": jsonable(points)}
    if kind == "k_module":
        return {"choices": jsonable(entry(params["modules"]))}
    if kind == "function_min":
        bounds = [tuple(b) for b in params["bounds"]]
        point = entry(bounds, int(params.get("iterations", 0)),
                      int(params.get("seed", 0)))
        return {"point": [float(point[0]), float(point[1])]}
    raise ValueError(f"unsupported evaluator kind {kind!r}")


def respond(status, payload=None, failure=None, diagnostics=""):
    line = json.dumps({"proto": PROTO_VERSION, "status": status,
                       "payload": payload, "failure": failure,
                       "diagnostics": diagnostics}, sort_keys=True)
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--candidate", required=True)
    parser.add_argument("--entry", required=True)
    args = parser.parse_args(argv)

    line = sys.stdin.readline()
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        respond("failed", failure="protocol", diagnostics=f"bad request json: {exc}")
        return 0
    if not isinstance(request, dict) or request.get("proto") != PROTO_VERSION:
        respond("failed", failure="protocol",
                diagnostics=f"unsupported protocol {request.get('proto')!r}"
                if isinstance(request, dict) else "request is not an object")
        return 0

    try:
        entry = load_entry(args.candidate, args.entry)
        payload = build_payload(request.get("evaluator_kind"),
                                request.get("params") or {}, entry)
    except Exception:
        respond("failed", failure="execution_error",
                diagnostics=traceback.format_exc(limit=8))
        return 0
    respond("ok", payload=payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
