"""JSON run configuration: validation, defaults and conversion to ``SimConfig``.

The document has one section per module. Unknown keys are errors; missing
optional keys take the defaults listed in ``DEFAULTS``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import replace

import numpy as np

from .balance import BalanceLimits
from .controller import ControllerConfig
from .human import SkillParams
from .interaction import CouplingGains, Mode, VirtualMass
from .model import ModelParams
from .qp import Settings
from .reference import RangeOfMotion, ReferenceProfile, TrialSchedule
from .simulator import Chair, Overreach, Push, SimConfig, UserConfig
from .transport import ChannelModel


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


_MP = ModelParams()

DEFAULTS = {
    "condition": "",
    "seed": 0,
    "duration": None,
    "model": {
        "shank_length": _MP.shank_length,
        "thigh_length": _MP.thigh_length,
        "trunk_length": _MP.trunk_length,
        "m_shank": _MP.m_shank,
        "m_thigh": _MP.m_thigh,
        "m_trunk": _MP.m_trunk,
        "com_shank": _MP.com_shank,
        "com_thigh": _MP.com_thigh,
        "com_trunk": _MP.com_trunk,
        "inertia_shank": None,
        "inertia_thigh": None,
        "inertia_trunk": None,
        "g": _MP.g,
        "alpha": 0.0,
        "pendulum_height": None,
        "q_min": list(_MP.q_min),
        "q_max": list(_MP.q_max),
        "viscous": list(_MP.viscous),
        "coulomb": list(_MP.coulomb),
        "friction_smoothing": _MP.friction_smoothing,
    },
    "controller": {
        "beta": 20.0,
        "dt": 0.002,
        "tau_max": 80.0,
        "qdot_max": 3.0,
        "enable_balance": True,
        "limit_margin": 0.01,
        "hold_window": 0.04,
        "failure_decay": 0.9,
        "virtual_mass": [1.0, 1.0, 1.0, 1.0, 1.0],
        "max_iter": 4000,
    },
    "coupling": {"gains": "stiff", "K_q": None, "C_q": None, "K_z": 1000.0, "C_z": 50.0},
    "balance": {
        "p_plus": 0.2,
        "p_minus": 0.3,
        "x_eq": 0.0,
        "z_max": None,
        "z_min": None,
        "theta_max": 0.35,
        "a_z": 0.8,
        "a_theta": 1.5,
        "seat_com_height": 0.55,
        "seat_margin": 0.05,
    },
    "reference": {"kind": "simple_sine", "phase": 0.0, "onset_shift": 0.0, "dwell": 3.0, "n_levels": 5, "seed": 0},
    "schedule": {
        "solo": 30.0,
        "rest": 30.0,
        "coupled": 30.0,
        "trials": 8,
        "inter_trial_rest": 30.0,
        "order": ["solo", "rest", "coupled"],
    },
    "transport": {
        "mode": "loopback",
        "latency_mean": 0.0,
        "latency_jitter": 0.0,
        "drop_probability": 0.0,
        "seed": 0,
        "outages": [],
    },
    "push": None,
    "chair": {"stiffness": 20000.0, "damping": 800.0, "clearance": 0.005, "rest_support": 1.0},
    "output": {"csv": "dyad_log.csv", "report": "report.txt"},
}

USER_DEFAULTS = {
    "label": "",
    "kp": 60.0,
    "kd": 10.0,
    "reaction_delay": 0.05,
    "noise_std": 1.0,
    "noise_cutoff": 2.0,
    "seed": 0,
    "strength": 60.0,
    "backpack_kp": 100.0,
    "backpack_kd": 140.0,
    "target_rate": 0.3,
    "rom": [0.80, 0.92],
    "overreach": None,
}

PUSH_DEFAULTS = {"user": "A", "start": 1.0, "duration": 0.2, "force": 50.0}
OVERREACH_DEFAULTS = {"amplitude": [0.8, 2.5, 2.5, 2.5, 2.5], "frequency": 0.4}

REQUIRED = ("mode", "users")


def _section(raw, defaults, where):
    if raw is None:
        return copy.deepcopy(defaults)
    if not isinstance(raw, dict):
        raise ConfigError(where, "expected an object")
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(raw))
    return out


def _num(v, where, *, allow_none=False, positive=False, nonneg=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(where, f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(where, "must be > 0")
    if nonneg and v < 0:
        raise ConfigError(where, "must be >= 0")
    return float(v)


def _vec(v, n, where, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return [float(v)] * n
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(where, f"expected {n} numbers")
    return [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return the complete document with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    allowed = set(DEFAULTS) | set(REQUIRED)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(key, "missing required field")

    doc = {}
    doc["condition"] = str(raw.get("condition", DEFAULTS["condition"]))
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a non-negative integer")
    doc["seed"] = seed
    doc["duration"] = _num(raw.get("duration"), "duration", allow_none=True, positive=True)
    try:
        doc["mode"] = Mode(raw["mode"]).value
    except ValueError:
        raise ConfigError("mode", f"unknown coupling mode {raw['mode']!r}") from None

    m = _section(raw.get("model"), DEFAULTS["model"], "model")
    for k in ("q_min", "q_max"):
        m[k] = _vec(m[k], 5, f"model.{k}")
    for k in ("viscous", "coulomb"):
        m[k] = _vec(m[k], 4, f"model.{k}")
    for k in ("shank_length", "thigh_length", "trunk_length", "g", "friction_smoothing"):
        m[k] = _num(m[k], f"model.{k}", positive=True)
    for k in ("m_shank", "m_thigh", "m_trunk", "com_shank", "com_thigh", "com_trunk", "alpha"):
        m[k] = _num(m[k], f"model.{k}", nonneg=True)
    for k in ("pendulum_height", "inertia_shank", "inertia_thigh", "inertia_trunk"):
        m[k] = _num(m[k], f"model.{k}", allow_none=True, positive=k == "pendulum_height", nonneg=True)
    doc["model"] = m

    c = _section(raw.get("controller"), DEFAULTS["controller"], "controller")
    for k in ("beta", "dt", "qdot_max", "hold_window", "failure_decay", "limit_margin"):
        c[k] = _num(c[k], f"controller.{k}", nonneg=True)
    if isinstance(c["tau_max"], list):
        c["tau_max"] = _vec(c["tau_max"], 4, "controller.tau_max")
    else:
        c["tau_max"] = _num(c["tau_max"], "controller.tau_max", positive=True)
    if not isinstance(c["enable_balance"], bool):
        raise ConfigError("controller.enable_balance", "expected true or false")
    vm = c["virtual_mass"]
    if isinstance(vm, list) and vm and isinstance(vm[0], list):
        if len(vm) != 5:
            raise ConfigError("controller.virtual_mass", "expected a 5x5 matrix")
        c["virtual_mass"] = [_vec(r, 5, f"controller.virtual_mass[{i}]") for i, r in enumerate(vm)]
    else:
        c["virtual_mass"] = _vec(vm, 5, "controller.virtual_mass")
    if isinstance(c["max_iter"], bool) or not isinstance(c["max_iter"], int) or c["max_iter"] < 1:
        raise ConfigError("controller.max_iter", "expected a positive integer")
    doc["controller"] = c

    g = _section(raw.get("coupling"), DEFAULTS["coupling"], "coupling")
    if g["gains"] not in ("soft", "stiff", "custom"):
        raise ConfigError("coupling.gains", "expected 'soft', 'stiff' or 'custom'")
    g["K_q"] = _vec(g["K_q"], 4, "coupling.K_q", allow_none=True)
    g["C_q"] = _vec(g["C_q"], 4, "coupling.C_q", allow_none=True)
    g["K_z"] = _num(g["K_z"], "coupling.K_z", nonneg=True)
    g["C_z"] = _num(g["C_z"], "coupling.C_z", nonneg=True)
    if g["gains"] == "custom" and (g["K_q"] is None or g["C_q"] is None):
        raise ConfigError("coupling.K_q", "custom gains need K_q and C_q")
    for k in ("K_q", "C_q"):
        if g[k] is not None and min(g[k]) < 0:
            raise ConfigError(f"coupling.{k}", "gains must be >= 0")
    doc["coupling"] = g

    b = _section(raw.get("balance"), DEFAULTS["balance"], "balance")
    for k in b:
        b[k] = _num(b[k], f"balance.{k}", allow_none=k in ("z_max", "z_min"))
    doc["balance"] = b

    r = _section(raw.get("reference"), DEFAULTS["reference"], "reference")
    if r["kind"] not in ("simple_sine", "multi_sine", "discrete_steps"):
        raise ConfigError("reference.kind", f"unknown profile {r['kind']!r}")
    for k in ("phase", "onset_shift"):
        r[k] = _num(r[k], f"reference.{k}")
    r["dwell"] = _num(r["dwell"], "reference.dwell", positive=True)
    for k in ("n_levels", "seed"):
        if isinstance(r[k], bool) or not isinstance(r[k], int):
            raise ConfigError(f"reference.{k}", "expected an integer")
    doc["reference"] = r

    s = _section(raw.get("schedule"), DEFAULTS["schedule"], "schedule")
    for k in ("solo", "rest", "coupled", "inter_trial_rest"):
        s[k] = _num(s[k], f"schedule.{k}", nonneg=True)
    if isinstance(s["trials"], bool) or not isinstance(s["trials"], int) or s["trials"] < 1:
        raise ConfigError("schedule.trials", "expected a positive integer")
    if not isinstance(s["order"], list) or sorted(s["order"]) != ["coupled", "rest", "solo"]:
        raise ConfigError("schedule.order", "expected a permutation of solo, rest, coupled")
    doc["schedule"] = s

    users = raw["users"]
    if not isinstance(users, list) or len(users) != 2:
        raise ConfigError("users", "expected a list of two users")
    doc["users"] = []
    for i, u in enumerate(users):
        w = f"users[{i}]"
        u = _section(u, USER_DEFAULTS, w)
        for k in ("kp", "kd"):
            if isinstance(u[k], list):
                if len(u[k]) not in (4, 5):
                    raise ConfigError(f"{w}.{k}", "expected 4 or 5 gains")
                u[k] = [_num(x, f"{w}.{k}[{j}]", nonneg=True) for j, x in enumerate(u[k])]
            else:
                u[k] = _num(u[k], f"{w}.{k}", nonneg=True)
        for k in ("reaction_delay", "noise_std", "backpack_kp", "backpack_kd"):
            u[k] = _num(u[k], f"{w}.{k}", nonneg=True)
        for k in ("noise_cutoff", "strength", "target_rate"):
            u[k] = _num(u[k], f"{w}.{k}", positive=True)
        if isinstance(u["seed"], bool) or not isinstance(u["seed"], int):
            raise ConfigError(f"{w}.seed", "expected an integer")
        u["rom"] = _vec(u["rom"], 2, f"{w}.rom")
        if not u["rom"][0] < u["rom"][1]:
            raise ConfigError(f"{w}.rom", "z_min must be < z_max")
        if u["overreach"] is not None:
            o = _section(u["overreach"], OVERREACH_DEFAULTS, f"{w}.overreach")
            o["amplitude"] = _vec(o["amplitude"], 5, f"{w}.overreach.amplitude")
            o["frequency"] = _num(o["frequency"], f"{w}.overreach.frequency", positive=True)
            u["overreach"] = o
        u["label"] = str(u["label"])
        doc["users"].append(u)

    t = _section(raw.get("transport"), DEFAULTS["transport"], "transport")
    if t["mode"] not in ("loopback", "channel"):
        raise ConfigError("transport.mode", "expected 'loopback' or 'channel'")
    for k in ("latency_mean", "latency_jitter"):
        t[k] = _num(t[k], f"transport.{k}", nonneg=True)
    t["drop_probability"] = _num(t["drop_probability"], "transport.drop_probability", nonneg=True)
    if t["drop_probability"] > 1:
        raise ConfigError("transport.drop_probability", "must be <= 1")
    if not isinstance(t["outages"], list):
        raise ConfigError("transport.outages", "expected a list of [start, end] pairs")
    t["outages"] = [_vec(w, 2, f"transport.outages[{i}]") for i, w in enumerate(t["outages"])]
    if isinstance(t["seed"], bool) or not isinstance(t["seed"], int):
        raise ConfigError("transport.seed", "expected an integer")
    doc["transport"] = t

    if raw.get("push") is not None:
        pu = _section(raw["push"], PUSH_DEFAULTS, "push")
        if pu["user"] not in ("A", "B"):
            raise ConfigError("push.user", "expected 'A' or 'B'")
        for k in ("start", "duration", "force"):
            pu[k] = _num(pu[k], f"push.{k}")
        doc["push"] = pu
    else:
        doc["push"] = None
    if "chair" in raw and raw["chair"] is None:
        doc["chair"] = None
    else:
        ch = _section(raw.get("chair"), DEFAULTS["chair"], "chair")
        for k in ch:
            ch[k] = _num(ch[k], f"chair.{k}", nonneg=True)
        doc["chair"] = ch
    o = _section(raw.get("output"), DEFAULTS["output"], "output")
    for k in o:
        if not isinstance(o[k], str) or not o[k]:
            raise ConfigError(f"output.{k}", "expected a file name")
    doc["output"] = o

    # semantic checks through the real constructors
    try:
        build(doc)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:  # constructor checks, e.g. limit ordering
        raise ConfigError("<config>", str(exc)) from None
    return doc


def _gains(g, mode) -> CouplingGains:
    if g["gains"] == "custom":
        base = CouplingGains(K_q=tuple(g["K_q"]), C_q=tuple(g["C_q"]))
    else:
        base = CouplingGains.soft() if g["gains"] == "soft" else CouplingGains.stiff()
        if g["K_q"] is not None:
            base = replace(base, K_q=tuple(g["K_q"]))
        if g["C_q"] is not None:
            base = replace(base, C_q=tuple(g["C_q"]))
    return CouplingGains(base.K_q, base.C_q, g["K_z"], g["C_z"], mode)


def build(doc: dict) -> SimConfig:
    """Turn a normalized document into a ``SimConfig``."""
    m = doc["model"]
    model = ModelParams(
        **{k: (tuple(v) if isinstance(v, list) else v) for k, v in m.items()}
    ).validate()
    c = doc["controller"]
    vm = np.array(c["virtual_mass"], dtype=float)
    mode = Mode(doc["mode"])
    ctrl = ControllerConfig(
        beta=c["beta"],
        dt=c["dt"],
        tau_max=tuple(c["tau_max"]) if isinstance(c["tau_max"], list) else c["tau_max"],
        qdot_max=c["qdot_max"],
        enable_balance=c["enable_balance"],
        limit_margin=c["limit_margin"],
        virtual_mass=VirtualMass(vm),
        gains=_gains(doc["coupling"], mode),
        limits=BalanceLimits(**doc["balance"]),
        hold_window=c["hold_window"],
        failure_decay=c["failure_decay"],
        qp=Settings(max_iter=c["max_iter"]),
    )
    r = doc["reference"]
    profile = ReferenceProfile(
        kind=r["kind"], phase=r["phase"], onset_shift=r["onset_shift"], dwell=r["dwell"], n_levels=r["n_levels"], seed=r["seed"]
    )
    s = doc["schedule"]
    sched = TrialSchedule(s["solo"], s["rest"], s["coupled"], s["trials"], s["inter_trial_rest"], tuple(s["order"]))
    users = []
    for u in doc["users"]:
        skill = SkillParams(
            kp=tuple(u["kp"]) if isinstance(u["kp"], list) else u["kp"],
            kd=tuple(u["kd"]) if isinstance(u["kd"], list) else u["kd"],
            reaction_delay=u["reaction_delay"],
            noise_std=u["noise_std"],
            noise_cutoff=u["noise_cutoff"],
            seed=u["seed"],
            strength=u["strength"],
            backpack_kp=u["backpack_kp"],
            backpack_kd=u["backpack_kd"],
            target_rate=u["target_rate"],
        )
        ov = u["overreach"]
        users.append(
            UserConfig(
                skill=skill,
                rom=RangeOfMotion(*u["rom"]),
                overreach=None if ov is None else Overreach(tuple(ov["amplitude"]), ov["frequency"]),
            )
        )
    t = doc["transport"]
    channel = ChannelModel(
        t["latency_mean"], t["latency_jitter"], t["drop_probability"], t["seed"], tuple(map(tuple, t["outages"]))
    )
    push = None if doc["push"] is None else Push(**doc["push"])
    chair = None if doc["chair"] is None else Chair(**doc["chair"])
    return SimConfig(
        model=model,
        controller=ctrl,
        mode=mode,
        profile=profile,
        schedule=sched,
        users=tuple(users),
        transport=t["mode"],
        channel=channel,
        push=push,
        chair=chair,
        duration=doc["duration"],
        condition=doc["condition"],
        seed=doc["seed"],
    )


def load(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return normalize(raw)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
