"""Scenario assembly: feeder and inventory files, profiles, presets.

Feeder file (JSON)::

    {"base_kva": 1000, "base_kv": 4.8, "v0": 1.0, "impedance_unit": "ohm",
     "nodes": ["799", "701", ...],
     "lines": [{"from": "799", "to": "701", "r": 0.08, "x": 0.08}, ...]}

``impedance_unit`` is ``ohm`` (needs ``base_kv``) or ``pu``.  The first node
is the substation.

Inventory file (JSON)::

    {"customers": [{"node": "704", "load_kw": 30, "load_kvar": 10,
                    "pv": [{"rating_kva": 200, "p_av_kw": 180, "c_p": 3, "c_q": 1}],
                    "tcl": [{"count": 15, "T_in": 76, "rates_w": [0, 4000], ...}]}]}

Profile CSVs have columns ``timestep,node,value`` with an optional
``unit`` column.  Kinds and units: ``pv`` (kW available), ``load_p`` (kW
consumed), ``load_q`` (kvar consumed), ``ambient`` (degF).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__, presets
from .config import ScenarioConfig
from .devices import CustomerSpec, PvSpec, TclSpec
from .dual import StepsizeSchedule
from .errors import ConfigError, IngestionError, ParameterError, TopologyError
from .grid import FeederTopology, Line, build_linear_model
from .problem import FeederProblem
from .recovery import RateGrid

__all__ = [
    "PROFILE_UNITS",
    "Profiles",
    "RunManifest",
    "parse_feeder",
    "parse_inventory",
    "ingest_profiles",
    "export_profiles",
    "aggregate_tcls",
    "build_problem",
    "load_scenario",
    "preset_config",
    "write_manifest",
    "make_manifest",
    "read_manifest",
    "file_digest",
]

log = logging.getLogger(__name__)

PROFILE_UNITS = {"pv": "kW", "load_p": "kW", "load_q": "kvar", "ambient": "degF"}
BUILTIN_PREFIX = "builtin:"


# -- feeder -----------------------------------------------------------------


def _read_json(ref: str) -> dict:
    if ref.startswith(BUILTIN_PREFIX):
        name, _, part = ref[len(BUILTIN_PREFIX):].partition("/")
        if name not in presets.BUILTIN:
            raise ConfigError(f"unknown builtin {name!r}; choose from {sorted(presets.BUILTIN)}")
        feeder_fn, inventory_fn = presets.BUILTIN[name]
        return inventory_fn() if part == "inventory" else feeder_fn()
    path = Path(ref)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def parse_feeder(data: Mapping) -> FeederTopology:
    """Build a topology from a feeder description, converting to per-unit."""
    try:
        nodes = [str(n) for n in data["nodes"]]
        base_kva = float(data.get("base_kva", 1000.0))
        v0 = float(data.get("v0", 1.0))
        unit = data.get("impedance_unit", "pu")
        raw_lines = data["lines"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"feeder: missing or invalid field {exc}") from exc
    if unit == "ohm":
        if "base_kv" not in data:
            raise ConfigError("feeder: impedance_unit 'ohm' requires base_kv")
        zbase = float(data["base_kv"]) ** 2 * 1e3 / base_kva
    elif unit == "pu":
        zbase = 1.0
    else:
        raise ConfigError(f"feeder: impedance_unit must be 'ohm' or 'pu', got {unit!r}")
    index = {label: i for i, label in enumerate(nodes)}
    if len(index) != len(nodes):
        raise ConfigError("feeder: duplicate node labels")
    lines = []
    for i, ln in enumerate(raw_lines):
        try:
            a, b = index[str(ln["from"])], index[str(ln["to"])]
            lines.append(Line(a, b, float(ln["r"]) / zbase, float(ln["x"]) / zbase))
        except KeyError as exc:
            raise ConfigError(f"feeder: line {i}: unknown node or missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"feeder: line {i}: {exc}") from exc
    try:
        return FeederTopology(tuple(nodes), tuple(lines), v0=v0, base_kva=base_kva)
    except (TopologyError, ParameterError) as exc:
        raise ConfigError(f"feeder: {exc}") from exc


# -- profiles ---------------------------------------------------------------


@dataclass
class Profiles:
    """Dense per-node series in the units of :data:`PROFILE_UNITS`.

    ``data[kind]`` has shape ``(len(timesteps[kind]), n_nodes)``; nodes
    absent from a file hold ``fill[kind]``.
    """

    labels: tuple[str, ...]
    timesteps: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    present: dict = field(default_factory=dict)

    def has(self, kind: str) -> bool:
        return kind in self.data and len(self.timesteps[kind]) > 0

    def at(self, kind: str, timestep: int) -> np.ndarray:
        """Series value at ``timestep`` for every load node."""
        steps = self.timesteps[kind]
        hit = np.flatnonzero(steps == timestep)
        if hit.size == 0:
            raise IngestionError(f"profile {kind!r} has no timestep {timestep}")
        return self.data[kind][hit[0]].copy()


def _profile_rows(ref: str, kind: str):
    """Yield ``(row_number, timestep, node, value, unit)``."""
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name != "ieee37":
            raise ConfigError(f"no builtin profiles named {name!r}")
        for i, (t, node, val) in enumerate(presets.ieee37_profiles()[kind], start=2):
            yield i, t, node, val, None
        return
    path = Path(ref)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read profile {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        cols = [h.strip().lower() for h in header]
        if cols[:3] != ["timestep", "node", "value"] or len(cols) > 4 or (len(cols) == 4 and cols[3] != "unit"):
            raise IngestionError(f"{path}: header must be timestep,node,value[,unit], got {header}")
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise IngestionError(f"{path}: row {rownum}: expected {len(cols)} fields, got {len(row)}")
            try:
                t = int(row[0])
                val = float(row[2])
            except ValueError as exc:
                raise IngestionError(f"{path}: row {rownum}: {exc}") from exc
            if not np.isfinite(val):
                raise IngestionError(f"{path}: row {rownum}: non-finite value")
            unit = row[3].strip() if len(cols) == 4 else None
            yield rownum, t, row[1].strip(), val, unit


def ingest_profiles(paths: Mapping[str, str], labels) -> Profiles:
    """Read profile CSVs into dense per-node series.

    Missing nodes default to 0 (NaN for ``ambient``) with a warning.

    Raises
    ------
    IngestionError
        On malformed rows (reported with their row number), unknown nodes,
        duplicate entries, or a unit column disagreeing with the kind.
    """
    labels = tuple(str(s) for s in labels)
    load_nodes = labels[1:]
    index = {label: i for i, label in enumerate(load_nodes)}
    prof = Profiles(labels)
    for kind, ref in paths.items():
        if kind not in PROFILE_UNITS:
            raise IngestionError(f"unknown profile kind {kind!r}")
        entries = {}
        for rownum, t, node, val, unit in _profile_rows(str(ref), kind):
            if unit is not None and unit != PROFILE_UNITS[kind]:
                raise IngestionError(f"{ref}: row {rownum}: unit {unit!r} does not match {PROFILE_UNITS[kind]!r} for {kind}")
            if node not in index:
                raise IngestionError(f"{ref}: row {rownum}: unknown node {node!r}")
            if (t, node) in entries:
                raise IngestionError(f"{ref}: row {rownum}: duplicate entry for timestep {t}, node {node}")
            entries[(t, node)] = val
        steps = np.array(sorted({t for t, _ in entries}), dtype=np.int64)
        fill = np.nan if kind == "ambient" else 0.0
        arr = np.full((len(steps), len(load_nodes)), fill)
        seen = np.zeros(len(load_nodes), dtype=bool)
        row_of = {t: i for i, t in enumerate(steps)}
        for (t, node), val in entries.items():
            arr[row_of[t], index[node]] = val
            seen[index[node]] = True
        if not entries:
            warnings.warn(f"profile {kind!r} is empty; using default values", stacklevel=2)
        elif not seen.all() and kind in ("load_p", "load_q"):
            missing = [load_nodes[i] for i in np.flatnonzero(~seen)]
            warnings.warn(f"profile {kind!r} has no data for nodes {missing}; baseline set to 0", stacklevel=2)
        prof.timesteps[kind] = steps
        prof.data[kind] = arr
        prof.present[kind] = seen
    return prof


def export_profiles(profiles: Profiles, directory) -> dict[str, Path]:
    """Write each kind back to ``<kind>.csv`` (values that were never
    provided are omitted)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    nodes = profiles.labels[1:]
    for kind, arr in profiles.data.items():
        path = directory / f"{kind}.csv"
        seen = profiles.present[kind]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "node", "value", "unit"])
            for i, t in enumerate(profiles.timesteps[kind]):
                for j, node in enumerate(nodes):
                    if seen[j] and not np.isnan(arr[i, j]):
                        w.writerow([int(t), node, repr(float(arr[i, j])), PROFILE_UNITS[kind]])
        out[kind] = path
    return out


# -- inventory --------------------------------------------------------------


def _tcl_from_entry(entry: Mapping, t_out_default) -> list[TclSpec]:
    count = int(entry.get("count", 1))
    if count < 1:
        raise ConfigError("tcl count must be at least 1")
    t_out = entry.get("T_out", t_out_default)
    if t_out is None or (isinstance(t_out, float) and np.isnan(t_out)):
        raise ConfigError("tcl needs T_out or an ambient profile for its node")
    spec = TclSpec(
        T_in=float(entry["T_in"]),
        T_out=float(t_out),
        rate_grid=RateGrid(tuple(float(r) for r in entry.get("rates_w", (0.0, 4000.0)))),
        theta1=float(entry.get("theta1", 0.1)),
        theta2=float(entry.get("theta2", -0.001)),
        T_min=float(entry.get("T_min", 70.0)),
        T_max=float(entry.get("T_max", 80.0)),
        T_nom=float(entry.get("T_nom", 75.0)),
        c_T=float(entry.get("c_T", 20.0)),
    )
    return [spec] * count


def parse_inventory(data: Mapping, topology: FeederTopology, profiles: Profiles | None = None, timestep: int = 0) -> list[CustomerSpec]:
    """Customers with device parameters resolved at ``timestep``."""
    labels = topology.labels
    index = {label: i for i, label in enumerate(labels)}
    base = topology.base_kva
    n = topology.n_nodes

    def series(kind):
        if profiles is not None and profiles.has(kind):
            return profiles.at(kind, timestep), profiles.present[kind]
        return None, np.zeros(n, dtype=bool)

    pv_kw, pv_seen = series("pv")
    load_p, lp_seen = series("load_p")
    load_q, lq_seen = series("load_q")
    ambient, amb_seen = series("ambient")

    customers = []
    try:
        entries = list(data["customers"])
    except (KeyError, TypeError) as exc:
        raise ConfigError("inventory: missing 'customers' list") from exc
    for ci, entry in enumerate(entries):
        try:
            node = index[str(entry["node"])]
        except KeyError as exc:
            raise ConfigError(f"inventory: customer {ci}: unknown node {entry.get('node')!r}") from exc
        if node == 0:
            raise ConfigError(f"inventory: customer {ci} sits on the substation node")
        j = node - 1
        try:
            pv_entries = list(entry.get("pv", []))
            ratings = [float(p["rating_kva"]) for p in pv_entries]
            pvs = []
            for p, rating in zip(pv_entries, ratings):
                if pv_kw is not None and pv_seen[j]:
                    avail = pv_kw[j] * rating / sum(ratings)
                else:
                    avail = float(p.get("p_av_kw", rating))
                pvs.append(PvSpec(avail / base, rating / base, float(p.get("c_p", 3.0)), float(p.get("c_q", 1.0))))
            t_out = ambient[j] if ambient is not None and amb_seen[j] else None
            tcls = []
            for t in entry.get("tcl", []):
                tcls.extend(_tcl_from_entry(t, t_out))
        except ConfigError as exc:
            raise ConfigError(f"inventory: customer {ci} at node {entry['node']}: {exc}") from exc
        except (KeyError, TypeError, ValueError, ParameterError) as exc:
            raise ConfigError(f"inventory: customer {ci} at node {entry['node']}: {exc}") from exc
        p0 = -float(entry.get("load_kw", 0.0)) / base
        q0 = -float(entry.get("load_kvar", 0.0)) / base
        if load_p is not None and lp_seen[j]:
            p0 = 0.0
        if load_q is not None and lq_seen[j]:
            q0 = 0.0
        customers.append(CustomerSpec(node, tuple(pvs), tuple(tcls), p0, q0))
    return customers


def aggregate_tcls(customers, mode: str) -> list[CustomerSpec]:
    """Regroup each node's TCLs for preset ``mode``.

    ``2`` and ``custom`` keep devices independent.  ``1`` and ``3`` merge
    the (identical) TCLs at a node into one device with ``n`` times the
    comfort weight and ``theta2 / n``; mode ``1`` keeps only the extreme
    combined rates, mode ``3`` every achievable sum of unit rates.
    """
    if mode in ("2", "custom"):
        return list(customers)
    if mode not in ("1", "3"):
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    out = []
    for cust in customers:
        if len(cust.tcls) <= 1:
            out.append(cust)
            continue
        first = cust.tcls[0]
        if any(t != first for t in cust.tcls[1:]):
            raise ConfigError(f"node {cust.node}: combined control needs identical TCLs")
        n = len(cust.tcls)
        unit = first.rate_grid.as_array()
        if mode == "1":
            rates = (n * unit[0], n * unit[-1])
        else:
            sums = {0.0}
            for _ in range(n):
                sums = {s + r for s in sums for r in unit}
            rates = tuple(sorted(sums))
        merged = TclSpec(
            T_in=first.T_in,
            T_out=first.T_out,
            rate_grid=RateGrid(rates),
            theta1=first.theta1,
            theta2=first.theta2 / n,
            T_min=first.T_min,
            T_max=first.T_max,
            T_nom=first.T_nom,
            c_T=first.c_T * n,
        )
        out.append(CustomerSpec(cust.node, cust.pvs, (merged,), cust.p_base, cust.q_base))
    return out


# -- problem / config -------------------------------------------------------


def _inventory_ref(ref: str) -> str:
    return ref + "/inventory" if ref.startswith(BUILTIN_PREFIX) and "/" not in ref else ref


def build_problem(config: ScenarioConfig) -> FeederProblem:
    """Resolve files and profiles into a problem with the original limits."""
    topology = parse_feeder(_read_json(config.feeder))
    profiles = ingest_profiles(config.profiles, topology.labels) if config.profiles else None
    inventory = _read_json(_inventory_ref(config.inventory))
    customers = parse_inventory(inventory, topology, profiles, config.timestep)
    customers = aggregate_tcls(customers, config.preset)
    model = build_linear_model(topology, config.v_limits)
    base = topology.base_kva
    n = topology.n_nodes
    p_extra = np.zeros(n)
    q_extra = np.zeros(n)
    if profiles is not None and profiles.has("load_p"):
        p_extra -= profiles.at("load_p", config.timestep) / base
    if profiles is not None and profiles.has("load_q"):
        q_extra -= profiles.at("load_q", config.timestep) / base
    return FeederProblem.from_customers(model, customers, base, topology, p_extra, q_extra)


def preset_config(name: str, **overrides) -> ScenarioConfig:
    """Configuration of a shipped scenario.

    ``ieee37`` uses the independent-TCL mode (preset 2) at noon with
    limits 0.95/1.05 tightened to 0.96/1.04; pass ``preset="1"`` or
    ``"3"`` for the combined modes.
    """
    if name == "ieee37":
        base = ScenarioConfig(
            feeder="builtin:ieee37",
            inventory="builtin:ieee37",
            profiles={k: "builtin:ieee37" for k in PROFILE_UNITS},
            timestep=presets.NOON,
            name="ieee37",
            preset="2",
            M=60,
            K=40_000,
            stepsize=StepsizeSchedule("constant", 0.1),
            v_limits=(0.95, 1.05),
            delta=0.01,
            voltage_mode="ac",
            sample_window=25_000,
        )
    elif name == "toy2":
        base = ScenarioConfig(
            feeder="builtin:toy2",
            inventory="builtin:toy2",
            name="toy2",
            M=10,
            K=20_000,
            stepsize=StepsizeSchedule("constant", 0.1),
            v_limits=(0.95, 1.05),
            sample_window=10_000,
        )
    elif name == "toy1":
        base = ScenarioConfig(
            feeder="builtin:toy1",
            inventory="builtin:toy1",
            name="toy1",
            M=1,
            K=1000,
            v_limits=(0.9, 1.005),
            sample_window=500,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(presets.BUILTIN)}")
    return base.replace(**overrides) if overrides else base


def load_scenario(source: str, overrides: Mapping | None = None) -> ScenarioConfig:
    """Config from a preset name or a scenario JSON file.

    File paths inside a scenario file are resolved relative to it.  The
    result is validated by assembling the problem once.
    """
    overrides = dict(overrides or {})
    if source in presets.BUILTIN:
        config = preset_config(source)
    else:
        path = Path(source)
        data = _read_json(str(path))
        root = path.parent
        for key in ("feeder", "inventory"):
            if key not in data:
                raise ConfigError(f"{path}: missing field {key!r}")
            if not str(data[key]).startswith(BUILTIN_PREFIX):
                data[key] = str(root / data[key])
        data["profiles"] = {
            k: (v if str(v).startswith(BUILTIN_PREFIX) else str(root / v)) for k, v in data.get("profiles", {}).items()
        }
        if "v_limits" in data:
            data["v_limits"] = tuple(data["v_limits"])
        config = ScenarioConfig.from_dict(data)
    if overrides:
        config = config.replace(**overrides)
    build_problem(config)
    return config


# -- manifests --------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    config: ScenarioConfig
    digests: dict
    seed: int
    out_dir: str
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "digests": dict(self.digests),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "version": self.version,
        }


def file_digest(ref: str) -> str:
    """SHA-256 of a referenced input; builtins hash their generated content."""
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name == "ieee37":
            payload = json.dumps(
                [presets.ieee37_feeder(), presets.ieee37_inventory(), presets.ieee37_profiles()], sort_keys=True
            )
        else:
            payload = json.dumps(_read_json(ref), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()
    return hashlib.sha256(Path(ref).read_bytes()).hexdigest()


def make_manifest(config: ScenarioConfig, out_dir) -> RunManifest:
    refs = {"feeder": config.feeder, "inventory": config.inventory}
    refs.update({f"profile:{k}": v for k, v in config.profiles.items()})
    digests = {key: file_digest(ref) for key, ref in refs.items()}
    return RunManifest(config, digests, config.seed, str(out_dir))


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path, verify: bool = True) -> RunManifest:
    data = _read_json(str(path))
    try:
        config = ScenarioConfig.from_dict(data["config"])
        manifest = RunManifest(config, data["digests"], int(data["seed"]), data["out_dir"], data.get("version", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed manifest: {exc}") from exc
    if verify:
        current = make_manifest(config, manifest.out_dir).digests
        changed = [k for k, v in manifest.digests.items() if current.get(k) != v]
        if changed:
            raise ConfigError(f"{path}: inputs changed since the manifest was written: {changed}")
    return manifest
