"""Manager-of-Managers: a routing tier that owns no device data.

Managers publish ``{managerid, address, mtids}`` summaries here; the MoMs
keeps only that table plus an mtid index, and forwards MT-addressed API
requests to whichever manager currently claims the MTID. Responses are
relayed byte for byte, so the MoMs can never leak, cache or rewrite
datapoints. An MTID that appears in a newer publish wins; the index drops
it from the previous owner.
"""

from __future__ import annotations

import json
import logging
from urllib.parse import urlencode

from iotmp.api import ApiRequest, ApiResponse, json_response
from iotmp.errors import (
    IotmpError,
    MalformedTopology,
    ManagerUnreachable,
    NotFound,
    TransportUnreachable,
    Unauthorized,
)
from iotmp.model.identifiers import is_identifier

logger = logging.getLogger(__name__)

# request roots that name an MTID in their second segment
_ROUTED_ROOTS = frozenset({"mt", "profiles", "policies"})


class MoMsConfig:
    def __init__(self, momsid: str = "moms", *, key: str = "",
                 publish_period: float = 10.0):
        self.momsid = momsid
        self.key = key
        self.publish_period = publish_period
        self.stale_after = 3.0 * publish_period


class ManagerOfManagers:
    def __init__(self, config: MoMsConfig, rt, http):
        self.config = config
        self.momsid = config.momsid
        self.rt = rt
        self.http = http
        self.managers: dict[str, dict] = {}  # managerid -> address/mtids/updated_at
        self.mt_index: dict[str, str] = {}   # mtid -> managerid

    # -- topology ---------------------------------------------------------------

    def apply_topology(self, obj) -> None:
        """Validate and install one manager's summary; strict schema."""
        if not isinstance(obj, dict) or set(obj) != {"managerid", "address", "mtids"}:
            raise MalformedTopology("summary must be exactly managerid/address/mtids")
        managerid, address, mtids = obj["managerid"], obj["address"], obj["mtids"]
        if not is_identifier(managerid):
            raise MalformedTopology(f"bad managerid {managerid!r}")
        if not isinstance(address, str) or not address:
            raise MalformedTopology("address must be a nonempty string")
        if not isinstance(mtids, list) or not all(is_identifier(m) for m in mtids):
            raise MalformedTopology("mtids must be a list of identifiers")
        claimed = set(mtids)
        for mtid in claimed:
            previous = self.mt_index.get(mtid)
            if previous is not None and previous != managerid:
                self.managers[previous]["mtids"].discard(mtid)
            self.mt_index[mtid] = managerid
        old = self.managers.get(managerid, {}).get("mtids", set())
        for mtid in old - claimed:
            if self.mt_index.get(mtid) == managerid:
                del self.mt_index[mtid]
        self.managers[managerid] = {
            "address": address,
            "mtids": claimed,
            "updated_at": self.rt.now(),
        }
        self.rt.trace(self.momsid, "topology", managerid=managerid, n=len(claimed))

    def locate(self, mtid: str) -> dict:
        managerid = self.mt_index.get(mtid)
        if managerid is None:
            raise NotFound(f"no manager claims {mtid}")
        return {"managerid": managerid, **self.managers[managerid]}

    def topology_view(self) -> dict:
        now = self.rt.now()
        out = {}
        for managerid, entry in sorted(self.managers.items()):
            out[managerid] = {
                "address": entry["address"],
                "mtids": sorted(entry["mtids"]),
                "updated_at": entry["updated_at"],
                "stale": (now - entry["updated_at"]) > self.config.stale_after,
            }
        return {"managers": out, "mts": len(self.mt_index)}

    # -- request handling ----------------------------------------------------------

    def handle(self, req: ApiRequest) -> ApiResponse:
        try:
            return self._dispatch(req)
        except IotmpError as exc:
            return json_response(exc.http_status, {"error": exc.code, "detail": str(exc)})
        except Exception:
            logger.exception("unhandled MoMs error for %s %s", req.method, req.path)
            return json_response(500, {"error": "InternalError", "detail": ""})

    def _dispatch(self, req: ApiRequest) -> ApiResponse:
        parts = tuple(p for p in req.path.split("/") if p)
        if parts == ():
            if req.method == "GET":
                return json_response(200, {"momsid": self.momsid,
                                           "managers": len(self.managers),
                                           "mts": len(self.mt_index)})
        elif parts == ("topology",):
            if req.method == "POST":
                if req.headers.get("x-manager-key", "") != self.config.key:
                    raise Unauthorized("bad manager key")
                try:
                    obj = json.loads(req.body.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise MalformedTopology(f"summary is not JSON: {exc}") from None
                self.apply_topology(obj)
                return json_response(200, {"accepted": obj["managerid"]})
            if req.method == "GET":
                return json_response(200, self.topology_view())
        elif parts == ("lookup",) and req.method == "GET":
            mtid = req.query.get("mtid", "")
            entry = self.locate(mtid)
            return json_response(200, {"mtid": mtid, "managerid": entry["managerid"],
                                       "address": entry["address"]})
        elif len(parts) >= 2 and parts[0] in _ROUTED_ROOTS:
            return self._forward(req, parts[1])
        raise NotFound(f"{req.method} {req.path}")

    def _forward(self, req: ApiRequest, mtid: str) -> ApiResponse:
        entry = self.locate(mtid)  # unknown MTID -> 404 without touching any manager
        # the security gates judge the request by its weakest hop, so the
        # forwarded leg mirrors the inbound channel's protection
        url = _match_scheme(entry["address"].rstrip("/"), req.secure) + req.path
        if req.query:
            url += "?" + urlencode(req.query)
        try:
            resp = self.http.request(req.method, url, headers=dict(req.headers),
                                     body=req.body)
        except (ManagerUnreachable, TransportUnreachable) as exc:
            raise ManagerUnreachable(f"{entry['managerid']}: {exc}") from None
        headers = dict(resp.headers)
        headers["x-routed-by"] = self.momsid
        now = self.rt.now()
        if (now - entry["updated_at"]) > self.config.stale_after:
            headers["x-stale"] = "1"
        self.rt.trace(self.momsid, "route", mtid=mtid, managerid=entry["managerid"],
                      status=resp.status)
        return ApiResponse(resp.status, resp.body, headers)


_SCHEME_PAIRS = {"sim": "sims", "http": "https"}


def _match_scheme(address: str, secure: bool) -> str:
    scheme, sep, rest = address.partition("://")
    if not sep:
        return address
    for plain, tls in _SCHEME_PAIRS.items():
        if scheme in (plain, tls):
            return (tls if secure else plain) + sep + rest
    return address
