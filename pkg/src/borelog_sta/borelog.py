"""Borehole-log rendering.

The renderer never touches the store directly: it walks the published
query surface (collar, trajectory, samplings, features, observations)
through a small client facade, so the same code drives a remote server or
an embedded store.  Output is deterministic for a given store state: every
list is explicitly sorted and all numbers are formatted, never repr'd.

The text log is a header block followed by a fixed-width depth table
(FROM, TO, N, SAMPLE, DESCRIPTION) and a RESULTS section listing every
other observation with its observed property, depth interval and feature.
The CSV variant carries the same rows with the extra results folded into
one column.
"""

from __future__ import annotations

import csv
import io

import httpx

from . import security
from .query import parse_query, evaluate
from .store import NotFound, Store

DESCRIPTION_PROPERTY = "lithology description"
N_VALUE_PROPERTY = "n_value"


class ClientError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(f"{status}: {message}")


class EmbeddedClient:
    """Runs queries in-process against a Store, as the given principal."""

    def __init__(self, store: Store, principal: security.Principal):
        self.store = store
        self.principal = principal

    def get(self, path: str) -> dict:
        try:
            plan = parse_query(path)
            return evaluate(plan, self.store.graph, self.principal)
        except NotFound as exc:
            raise ClientError(404, str(exc)) from exc

    def close(self):
        pass


class HttpClient:
    """Same surface over HTTP; auth is a (username, password) pair or None."""

    def __init__(self, endpoint: str, auth=None):
        self.root = endpoint.rstrip("/")
        if not self.root.endswith("/v1.1"):
            self.root += "/v1.1"
        self._client = httpx.Client(auth=auth, timeout=30.0)

    def get(self, path: str) -> dict:
        url = path if path.startswith("http") else f"{self.root}/{path.lstrip('/')}"
        response = self._client.get(url)
        if response.status_code >= 400:
            try:
                message = response.json()["error"]["message"]
            except Exception:
                message = response.text
            raise ClientError(response.status_code, message)
        return response.json()

    def post_batch(self, document: dict) -> dict:
        response = self._client.post(f"{self.root}/$batch", json=document)
        if response.status_code >= 400:
            try:
                message = response.json()["error"]["message"]
            except Exception:
                message = response.text
            raise ClientError(response.status_code, message)
        return response.json()["created"]

    def close(self):
        self._client.close()


def _collection(client, path: str) -> list:
    document = client.get(path)
    values = list(document.get("value", []))
    while "@iot.nextLink" in document:
        document = client.get(document["@iot.nextLink"])
        values.extend(document.get("value", []))
    return values


def _fmt_depth(value) -> str:
    return "" if value is None else f"{float(value):.2f}"


def _fmt_result(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return "" if value is None else str(value)


def _sampling_span(sampling) -> tuple:
    at = sampling.get("atPosition")
    if at is not None:
        return float(at), float(at)
    start = sampling.get("fromPosition")
    end = sampling.get("toPosition")
    return (
        float(start) if start is not None else None,
        float(end) if end is not None else None,
    )


class _Row:
    def __init__(self, sampling):
        self.start, self.end = _sampling_span(sampling)
        self.sampling = sampling
        self.samples = []
        self.description = ""
        self.n_value = ""
        self.extra = []

    def sort_key(self):
        return (
            self.start is None, self.start if self.start is not None else 0.0,
            self.end is None, self.end if self.end is not None else 0.0,
            self.sampling["@iot.id"],
        )


def collect_log(client, collar_id: int) -> dict:
    """Gather everything the log needs with navigation queries."""
    collar = client.get(f"BhCollarThings({collar_id})")
    projects = _collection(client, f"BhCollarThings({collar_id})/Projects")
    locations = _collection(client, f"BhCollarThings({collar_id})/Locations")
    trajectories = _collection(client, f"BhCollarThings({collar_id})/BhTrajectoryThings")
    rows = []
    trajectory = trajectories[0] if trajectories else None
    if trajectory is not None:
        tid = trajectory["@iot.id"]
        for sampling in _collection(client, f"BhTrajectoryThings({tid})/BhSamplings"):
            rows.append(_build_row(client, sampling))
    rows.sort(key=_Row.sort_key)
    return {
        "collar": collar,
        "projects": projects,
        "locations": locations,
        "trajectory": trajectory,
        "rows": rows,
    }


def _build_row(client, sampling) -> _Row:
    row = _Row(sampling)
    sid = sampling["@iot.id"]
    features = _collection(client, f"BhSamplings({sid})/BhFeaturesOfInterest")
    for feature in sorted(features, key=lambda f: f["@iot.id"]):
        fid = feature["@iot.id"]
        type_names = {
            ft.get("name")
            for ft in _collection(client, f"BhFeaturesOfInterest({fid})/BhFeatureTypes")
        }
        if "Core" in type_names and "Specimen" not in type_names:
            row.samples.append(feature.get("name", ""))
        observations = _collection(
            client,
            f"BhFeaturesOfInterest({fid})/Observations"
            "?$expand=Datastream($expand=ObservedProperty)",
        )
        for obs in sorted(observations, key=lambda o: o["@iot.id"]):
            prop = obs.get("Datastream", {}).get("ObservedProperty", {}).get("name", "")
            result = _fmt_result(obs.get("result"))
            if prop == DESCRIPTION_PROPERTY and not row.description:
                row.description = result
            elif prop == N_VALUE_PROPERTY and not row.n_value:
                row.n_value = result
            else:
                row.extra.append((prop, feature.get("name", ""), result, obs["@iot.id"]))
    row.extra.sort(key=lambda e: (e[0], e[3]))
    return row


def _header_lines(data: dict) -> list:
    collar = data["collar"]
    lines = [f"BOREHOLE LOG  {collar.get('name', '')}"]
    lines.append("=" * len(lines[0]))
    if collar.get("description"):
        lines.append(f"Description: {collar['description']}")
    if data["projects"]:
        names = ", ".join(sorted(p.get("name", "") for p in data["projects"]))
        lines.append(f"Project: {names}")
    for key, value in sorted((collar.get("properties") or {}).items()):
        lines.append(f"{key}: {value}")
    for location in sorted(data["locations"], key=lambda l: l["@iot.id"]):
        geometry = location.get("location") or {}
        if geometry.get("type") == "Point":
            coords = ", ".join(_fmt_result(c) for c in geometry.get("coordinates", []))
            lines.append(f"Collar location: {coords}")
        for key, value in sorted((location.get("properties") or {}).items()):
            lines.append(f"{key}: {value}")
    trajectory = data["trajectory"]
    if trajectory is not None:
        length = trajectory.get("lengthHole")
        uom = trajectory.get("uom", "")
        if length is not None:
            lines.append(f"Hole length: {_fmt_result(length)} {uom}".rstrip())
    return lines


def render_borehole_log(client, collar_id: int) -> str:
    """Fixed-width text log for one collar."""
    data = collect_log(client, collar_id)
    lines = _header_lines(data)
    lines.append("")
    lines.append(f"{'FROM':>8} {'TO':>8} {'N':>5}  {'SAMPLE':<24} DESCRIPTION")
    for row in data["rows"]:
        sample = ", ".join(row.samples)
        lines.append(
            f"{_fmt_depth(row.start):>8} {_fmt_depth(row.end):>8} "
            f"{row.n_value:>5}  {sample:<24} {row.description}".rstrip()
        )
    extras = [
        (row, prop, feature, result)
        for row in data["rows"]
        for prop, feature, result, _ in row.extra
    ]
    if extras:
        lines.append("")
        lines.append("RESULTS")
        for row, prop, feature, result in extras:
            span = f"{_fmt_depth(row.start):>8} {_fmt_depth(row.end):>8}"
            lines.append(f"{span}  {prop} [{feature}]: {result}")
    return "\n".join(lines) + "\n"


def render_borehole_csv(client, collar_id: int) -> str:
    """CSV variant: one row per sampling, extras folded into one column."""
    data = collect_log(client, collar_id)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["from", "to", "n", "sample", "description", "results"])
    for row in data["rows"]:
        folded = "; ".join(
            f"{prop} [{feature}]={result}" for prop, feature, result, _ in row.extra
        )
        writer.writerow([
            _fmt_depth(row.start), _fmt_depth(row.end), row.n_value,
            ", ".join(row.samples), row.description, folded,
        ])
    return buffer.getvalue()
