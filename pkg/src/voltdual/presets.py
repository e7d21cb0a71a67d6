"""Built-in feeders, device inventories and synthetic profiles.

``ieee37`` is a single-phase equivalent of the 37-node test feeder
(positive-sequence impedances of the four underground cable configurations,
published line lengths and spot loads).  Measured load and irradiance data
are replaced by synthetic daily profiles on 96 quarter-hour steps; step 48
is noon.

``toy2`` is a two-node chain with one PV and one TCL whose upper voltage
limit binds.  ``toy1`` is a single node with one PV and no reactance.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NOON",
    "IEEE37_PV_NODES",
    "IEEE37_TCL_NODES",
    "ieee37_feeder",
    "ieee37_inventory",
    "ieee37_profiles",
    "toy2_feeder",
    "toy2_inventory",
    "toy1_feeder",
    "toy1_inventory",
    "BUILTIN",
]

NOON = 48
STEPS_PER_DAY = 96

# Ohm per mile, positive sequence.
_CABLE = {
    "721": (0.2253, 0.2341),
    "722": (0.3122, 0.3299),
    "723": (0.8065, 0.4602),
    "724": (1.5748, 0.3501),
}

# (from, to, length ft, configuration)
_IEEE37_LINES = [
    ("799", "701", 1850, "721"),
    ("701", "702", 960, "722"),
    ("702", "705", 400, "724"),
    ("702", "713", 360, "723"),
    ("702", "703", 1320, "722"),
    ("703", "727", 240, "724"),
    ("703", "730", 600, "723"),
    ("704", "714", 80, "724"),
    ("704", "720", 800, "723"),
    ("705", "742", 320, "724"),
    ("705", "712", 240, "724"),
    ("706", "725", 280, "724"),
    ("707", "724", 760, "724"),
    ("707", "722", 120, "724"),
    ("708", "733", 320, "723"),
    ("708", "732", 320, "724"),
    ("709", "731", 600, "723"),
    ("709", "708", 320, "723"),
    ("710", "735", 200, "724"),
    ("710", "736", 1280, "724"),
    ("711", "741", 400, "723"),
    ("711", "740", 200, "724"),
    ("713", "704", 520, "723"),
    ("714", "718", 520, "724"),
    ("720", "707", 920, "724"),
    ("720", "706", 600, "723"),
    ("727", "744", 280, "723"),
    ("730", "709", 200, "723"),
    ("733", "734", 560, "723"),
    ("734", "737", 640, "723"),
    ("734", "710", 520, "724"),
    ("737", "738", 400, "723"),
    ("738", "711", 400, "723"),
    ("744", "728", 200, "724"),
    ("744", "729", 280, "724"),
    ("709", "775", None, "XFM"),
]

# 500 kVA in-line transformer, 1.81 + j4.42 % on its own rating
_XFM_PU_OWN = (0.0181, 0.0442)
_XFM_KVA = 500.0

# kW per node, lagging power factor 0.9
_IEEE37_LOADS_KW = {
    "701": 630, "712": 85, "713": 85, "714": 38, "718": 85, "720": 85,
    "722": 161, "724": 42, "725": 42, "727": 42, "728": 126, "729": 42,
    "730": 85, "731": 85, "732": 42, "733": 85, "734": 42, "735": 85,
    "736": 42, "737": 140, "738": 126, "740": 85, "741": 42, "742": 95,
    "744": 42,
}

IEEE37_LABELS = ["799"] + sorted(({a for a, *_ in _IEEE37_LINES} | {b for _, b, *_ in _IEEE37_LINES}) - {"799"})

IEEE37_PV_NODES = [4, 7, 10, 13, 17, 20, 22, 23, 26, 28, 29, 30, 31, 32, 33, 34, 35, 36]
IEEE37_TCL_NODES = [2, 5, 6, 7, 9, 10, 11, 13, 14, 16, 18, 19, 20, 21, 22, 24, 26, 27, 28, 29, 30, 32, 33, 35, 36]
# Ratings follow the PV list order: 3rd entry 300 kVA, 15th and 16th 350 kVA.
_PV_RATING_KVA = [300.0 if i == 2 else 350.0 if i in (14, 15) else 200.0 for i in range(len(IEEE37_PV_NODES))]

BASE_KVA_37 = 2500.0
BASE_KV_37 = 4.8
# regulator output raised for the noon export peak
V0_37 = 1.03


def ieee37_feeder() -> dict:
    """Feeder description with impedances in ohms."""
    lines = []
    zbase = BASE_KV_37**2 * 1e3 / BASE_KVA_37
    for a, b, length, cfg in _IEEE37_LINES:
        if cfg == "XFM":
            scale = BASE_KVA_37 / _XFM_KVA
            r, x = (v * scale * zbase for v in _XFM_PU_OWN)
        else:
            r, x = (v * length / 5280.0 for v in _CABLE[cfg])
        lines.append({"from": a, "to": b, "r": round(r, 8), "x": round(x, 8)})
    return {
        "name": "ieee37",
        "base_kva": BASE_KVA_37,
        "base_kv": BASE_KV_37,
        "v0": V0_37,
        "impedance_unit": "ohm",
        "nodes": IEEE37_LABELS,
        "lines": lines,
    }


def ieee37_inventory() -> dict:
    """18 PV inverters and 15 identical TCLs at each of 25 nodes."""
    customers = {}
    for idx, rating in zip(IEEE37_PV_NODES, _PV_RATING_KVA):
        label = IEEE37_LABELS[idx]
        customers.setdefault(label, {"node": label})["pv"] = [{"rating_kva": rating, "c_p": 3.0, "c_q": 1.0}]
    for j, idx in enumerate(IEEE37_TCL_NODES):
        label = IEEE37_LABELS[idx]
        # indoor temperatures spread over 75.5-76.46 degF at 95 degF outside keep every relaxed
        # setpoint strictly between grid rates
        t_in = round(75.5 + 0.04 * j, 3)
        customers.setdefault(label, {"node": label})["tcl"] = [
            {
                "count": 15,
                "T_in": t_in,
                "theta1": 0.1,
                "theta2": -0.001,
                "T_min": 70.0,
                "T_max": 80.0,
                "T_nom": 75.0,
                "c_T": 20.0,
                "rates_w": [0.0, 4000.0],
            }
        ]
    ordered = [customers[k] for k in sorted(customers, key=IEEE37_LABELS.index)]
    return {"name": "ieee37", "customers": ordered}


def _pv_shape(steps=STEPS_PER_DAY):
    hours = np.arange(steps) * 24.0 / steps
    shape = np.exp(-0.5 * ((hours - 12.0) / 2.5) ** 2)
    shape[(hours < 6) | (hours > 18)] = 0.0
    return shape


def _load_shape(steps=STEPS_PER_DAY):
    hours = np.arange(steps) * 24.0 / steps
    return 0.45 + 0.2 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2) + 0.1 * np.exp(-0.5 * ((hours - 8.0) / 1.5) ** 2)


def ieee37_profiles(pv_peak: float = 0.95, ambient_f: float = 95.0) -> dict[str, list[tuple[int, str, float]]]:
    """Rows ``(timestep, node label, value)`` for each profile kind.

    ``pv`` availability peaks at ``pv_peak`` of rating at noon; ``load_p``
    and ``load_q`` are consumption (kW, kvar); ``ambient`` is held at
    ``ambient_f`` all day.
    """
    pv_shape = _pv_shape()
    load_shape = _load_shape()
    tanphi = np.tan(np.arccos(0.9))
    rows = {"pv": [], "load_p": [], "load_q": [], "ambient": []}
    for t in range(STEPS_PER_DAY):
        for idx, rating in zip(IEEE37_PV_NODES, _PV_RATING_KVA):
            rows["pv"].append((t, IEEE37_LABELS[idx], round(rating * pv_peak * pv_shape[t], 6)))
        for label in IEEE37_LABELS[1:]:
            kw = _IEEE37_LOADS_KW.get(label, 0.0) * load_shape[t]
            rows["load_p"].append((t, label, round(kw, 6)))
            rows["load_q"].append((t, label, round(kw * tanphi, 6)))
            rows["ambient"].append((t, label, float(ambient_f)))
    return rows


def toy2_feeder() -> dict:
    return {
        "name": "toy2",
        "base_kva": 1000.0,
        "v0": 1.0,
        "impedance_unit": "pu",
        "nodes": ["0", "1", "2"],
        "lines": [{"from": "0", "to": "1", "r": 0.05, "x": 0.05}, {"from": "1", "to": "2", "r": 0.1, "x": 0.1}],
    }


def toy2_inventory() -> dict:
    return {
        "name": "toy2",
        "customers": [
            {
                "node": "1",
                "load_kw": 100.0,
                "load_kvar": 50.0,
                "tcl": [{"count": 1, "T_in": 76.0, "T_out": 96.0, "c_T": 20.0, "rates_w": [0.0, 4000.0, 8000.0]}],
            },
            {
                "node": "2",
                "load_kw": 50.0,
                "load_kvar": 20.0,
                "pv": [{"rating_kva": 800.0, "p_av_kw": 600.0, "c_p": 0.03, "c_q": 0.01}],
            },
        ],
    }


def toy1_feeder() -> dict:
    return {
        "name": "toy1",
        "base_kva": 1000.0,
        "v0": 1.0,
        "impedance_unit": "pu",
        "nodes": ["0", "1"],
        "lines": [{"from": "0", "to": "1", "r": 0.01, "x": 0.0}],
    }


def toy1_inventory() -> dict:
    return {
        "name": "toy1",
        "customers": [{"node": "1", "pv": [{"rating_kva": 1500.0, "p_av_kw": 1000.0, "c_p": 3.0, "c_q": 1.0}]}],
    }


BUILTIN = {
    "ieee37": (ieee37_feeder, ieee37_inventory),
    "toy2": (toy2_feeder, toy2_inventory),
    "toy1": (toy1_feeder, toy1_inventory),
}
