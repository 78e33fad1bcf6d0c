"""
Command-line entry point: ``quditkit <subcommand> --config run.json --out DIR``.

Every subcommand validates its JSON config against a schema (unknown keys
are rejected), computes all outputs in memory, then writes them together
with a ``plot_manifest.json`` describing how to draw them.  Outputs carry
no timestamps, so identical configs and seeds give identical files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import jsonschema

log = logging.getLogger("quditkit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_GLOBAL = {
    "seed": {"type": "integer", "minimum": 0},
    "output_path": {"type": "string"},
    "device_spec_path": {"type": "string"},
}


def _schema(props: dict, required=()) -> dict:
    return {
        "type": "object",
        "properties": {**_GLOBAL, **props},
        "required": list(required),
        "additionalProperties": False,
    }


_D = {"type": "integer", "minimum": 2, "maximum": 40}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INTS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMAS = {
    "displace-scan": _schema({
        "d": _D,
        "phi": {"type": "number"},
        "theta_max": _POS,
        "points": {"type": "integer", "minimum": 2},
    }, ["d"]),
    "wigner-scan": _schema({
        "d": _D,
        "state": {"enum": ["fock", "coherent", "cat", "superposition", "random_mixed"]},
        "level": {"type": "integer", "minimum": 0},
        "theta": {"type": "number"},
        "phi": {"type": "number"},
        "n_theta": {"type": "integer", "minimum": 2},
        "n_phi": {"type": "integer", "minimum": 2},
        "reconstruct": {"type": "boolean"},
    }, ["d"]),
    "decompose": _schema({
        "d": _D,
        "depth": {"type": "integer", "minimum": 0},
        "mode": {"enum": ["general", "pi_half_canonical"]},
        "n_targets": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
    }, ["d"]),
    "pulse-optimize": _schema({
        "d": _D,
        "T_ns": _POS,
        "theta": {"type": "number"},
        "corrections": {"type": "array", "items": {"enum": ["phase", "detuning", "drag"]},
                        "uniqueItems": True},
        "max_iter": {"type": "integer", "minimum": 1},
        "rtol": _POS,
    }, ["d", "T_ns"]),
    "rb": _schema({
        "d": _D,
        "q": {"type": "number", "minimum": 0, "maximum": 1},
        "seeds": _INTS | {"items": {"type": "integer", "minimum": 0}},
        "lengths": _INTS,
        "n_sequences": {"type": "integer", "minimum": 1},
    }, ["d", "q"]),
    "rb-validate": _schema({
        "dims": {"type": "array", "items": _D, "minItems": 1},
        "q_grid": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "lengths": _INTS,
        "n_sequences": {"type": "integer", "minimum": 1},
    }),
    "readout": _schema({
        "d": {"type": "integer", "minimum": 2, "maximum": 8},
        "shots": {"type": "integer", "minimum": 50},
        "target_fidelity": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "kappa_mhz": _POS,
        "sigma": _POS,
    }),
    "budget": _schema({
        "f01": _POS,
        "t1_us": _POS,
        "q_scale": _POS,
        "ej_over_ec": _POS,
        "q_values": {"type": "array", "items": _POS, "minItems": 1},
        "calibration_path": {"type": "string"},
    }),
    "calibrate-budget": _schema({
        "dims": {"type": "array", "items": _D, "minItems": 1},
        "rtol": _POS,
    }),
}


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quditkit", description=__doc__.splitlines()[1])
    p.add_argument("command", choices=sorted(SCHEMAS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides output_path)")
    p.add_argument("--threads", type=int, help="worker threads (falls back to QUDITKIT_THREADS)")
    p.add_argument("--verbose", action="store_true")
    return p


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def _set_threads(n):
    """
    Cap native thread pools.  Only effective before numpy is first imported,
    which is why the numerical modules are loaded after this call.
    """
    if n is None:
        env = os.environ.get("QUDITKIT_THREADS")
        try:
            n = int(env) if env else None
        except ValueError as exc:
            raise ConfigError(f"QUDITKIT_THREADS must be an integer, got {env!r}") from exc
    if n is None:
        return None
    if n < 1:
        raise ConfigError("threads must be positive")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)
    return n


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = {}
        if args.config:
            with open(args.config) as fh:
                cfg = json.load(fh)
        jsonschema.validate(cfg, SCHEMAS[args.command])
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out_dir = args.out or cfg.get("output_path") or "."
        _set_threads(args.threads)
    except (OSError, json.JSONDecodeError) as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except jsonschema.ValidationError as exc:
        return _error("config", exc.message, EXIT_CONFIG)
    except (ConfigError, ValueError) as exc:
        return _error("config", str(exc), EXIT_CONFIG)

    from .commands import COMMANDS

    try:
        files = COMMANDS[args.command](cfg, seed)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    # LinAlgError and IntegrationError derive from ValueError and RuntimeError
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return _error("numerical", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC)
    except Exception as exc:  # noqa: BLE001  diagnostics must stay machine readable
        return _error("internal", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC)

    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text)
    log.info("wrote %s", ", ".join(sorted(files)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
