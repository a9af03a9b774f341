"""Scenario documents: a JSON tree of spaces, components, circuits and audits.

Every reference is by name and resolved once; errors carry a JSON path.
Contract vectors may contain the string ``"inf"``.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Dict, Optional

import numpy as np

from ..bellman import AffineOperator, Transformer, make_transformer
from ..circuit import Hole, Leaf, Parallel, Series, Trace, TraceConstants
from ..component import FiniteMdp, Oddc, Policy
from ..core import FiniteSpace, Kernel, direct_sum, product_space
from ..errors import CircuitError, ParseError

__all__ = ["Document", "load_document"]


def _num_array(value, where: str, ndim: Optional[int] = None, allow_inf: bool = False) -> np.ndarray:
    def conv(x):
        if isinstance(x, list):
            return [conv(y) for y in x]
        if allow_inf and x in ("inf", "+inf", "Infinity"):
            return float("inf")
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ParseError(f"expected a number, got {x!r}", where)
        return float(x)

    try:
        arr = np.array(conv(value), dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"ragged array: {exc}", where) from None
    if ndim is not None and arr.ndim != ndim:
        raise ParseError(f"expected a {ndim}-dimensional array, got {arr.ndim}", where)
    return arr


class Document:
    """Parsed scenario with lazily resolved named objects."""

    def __init__(self, data: Dict[str, Any], digest: str, source: str = "<document>"):
        if not isinstance(data, dict):
            raise ParseError("top level must be an object", "$")
        self.data = data
        self.digest = digest
        self.source = source
        self._spaces: Dict[str, FiniteSpace] = {}
        self._components: Dict[str, Oddc] = {}
        self._policies: Dict[str, Policy] = {}
        self._ops: Dict[str, Any] = {}
        self.origins: Dict[str, tuple] = {}

    def section(self, key: str, required: bool = True):
        if key not in self.data:
            if required:
                raise ParseError(f"missing section {key!r}", "$")
            return None
        return self.data[key]

    def _entry(self, section: str, name: str):
        sec = self.section(section)
        if not isinstance(sec, dict) or name not in sec:
            raise ParseError(f"unknown name {name!r}", f"$.{section}")
        return sec[name]

    # spaces -----------------------------------------------------------
    def space(self, ref) -> FiniteSpace:
        if isinstance(ref, dict):
            return self._space_expr(ref, "$")
        if not isinstance(ref, str):
            raise ParseError(f"space reference must be a name, got {ref!r}", "$")
        if ref == "I":
            return FiniteSpace("I", ("*",))
        if ref not in self._spaces:
            self._spaces[ref] = self._space_def(ref, self._entry("spaces", ref), f"$.spaces.{ref}")
        return self._spaces[ref]

    def _space_expr(self, spec: dict, where: str) -> FiniteSpace:
        for key, build in (("sum", direct_sum), ("product", product_space)):
            if key in spec:
                parts = spec[key]
                if not isinstance(parts, list) or len(parts) != 2:
                    raise ParseError(f"{key} needs exactly two parts", where)
                return build(self.space(parts[0]), self.space(parts[1]))
        raise ParseError("space expression must be {'sum': [a, b]} or {'product': [a, b]}", where)

    def _space_def(self, name: str, spec, where: str) -> FiniteSpace:
        if isinstance(spec, int) and not isinstance(spec, bool):
            if spec < 1:
                raise ParseError("space size must be positive", where)
            return FiniteSpace.of_size(name, spec)
        if isinstance(spec, list):
            try:
                return FiniteSpace(name, tuple(spec))
            except ValueError as exc:
                raise ParseError(str(exc), where) from None
        if isinstance(spec, dict):
            return self._space_expr(spec, where)
        raise ParseError("space must be a size, a label list or a sum/product expression", where)

    # components and policies -----------------------------------------
    def component(self, name: str) -> Oddc:
        if name not in self._components:
            where = f"$.components.{name}"
            spec = self._entry("components", name)
            try:
                self._components[name] = self._component(spec, where)
            except CircuitError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), where) from None
        return self._components[name]

    def _component(self, spec: dict, where: str) -> Oddc:
        gamma = spec.get("gamma")
        if not isinstance(gamma, (int, float)):
            raise ParseError("gamma is required", where)
        s_in = self.space(spec["s_in"]) if "s_in" in spec else None
        acts = self.space(spec["actions"]) if "actions" in spec else None
        s_out = self.space(spec["s_out"]) if "s_out" in spec else s_in
        r_max = spec.get("r_max")
        if "trans" in spec:
            trans = _num_array(spec["trans"], where + ".trans", 3)
            reward = _num_array(spec["reward"], where + ".reward", 2)
            return Oddc.from_arrays(trans, reward, gamma, s_in, acts, s_out, r_max)
        if "kernel" in spec:
            rsp = self.space(spec["reward_space"])
            k = _num_array(spec["kernel"], where + ".kernel", 2)
            kernel = Kernel(product_space(s_in, acts), product_space(s_out, rsp), k)
            return Oddc(s_in, acts, s_out, rsp, kernel, _num_array(spec["rho"], where + ".rho", 1), gamma, r_max)
        raise ParseError("component needs trans/reward arrays or kernel/rho", where)

    def mdp(self, name: str) -> FiniteMdp:
        return self.component(name).to_mdp()

    def policy(self, name: str) -> Policy:
        if name not in self._policies:
            where = f"$.policies.{name}"
            spec = self._entry("policies", name)
            states, acts = self.space(spec["states"]), self.space(spec["actions"])
            if spec.get("probs") == "uniform":
                self._policies[name] = Policy.uniform(states, acts)
            else:
                try:
                    self._policies[name] = Policy.from_array(states, acts, _num_array(spec["probs"], where + ".probs", 2))
                except CircuitError as exc:
                    raise ParseError(str(exc), where) from None
        return self._policies[name]

    # transformers and circuits ---------------------------------------
    def transformer(self, name: str):
        if name not in self._ops:
            where = f"$.transformers.{name}"
            spec = self._entry("transformers", name)
            try:
                self._ops[name] = self._transformer(name, spec, where)
            except CircuitError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), where) from None
        return self._ops[name]

    def _transformer(self, name: str, spec: dict, where: str):
        if "component" in spec:
            m = self.component(spec["component"])
            pi = self.policy(spec["policy"])
            self.origins[name] = (m, pi)
            return make_transformer(m, pi, spec.get("radius"))
        x, y = self.space(spec["in"]), self.space(spec["out"])
        if "linear" in spec:
            return AffineOperator(x, y, _num_array(spec["offset"], where + ".offset", 1),
                                  _num_array(spec["linear"], where + ".linear", 2),
                                  spec.get("ball_in"), spec.get("ball_out"))
        return Transformer(x, y, _num_array(spec["reward"], where + ".reward", 1), spec["gamma"],
                           Kernel(x, y, _num_array(spec["trans"], where + ".trans", 2)),
                           spec.get("ball_in"), spec.get("ball_out"))

    def circuit(self, node=None, where: str = "$.circuit"):
        if node is None:
            node = self.section("circuit")
        if not isinstance(node, dict) or len(node) != 1:
            raise ParseError("circuit node must be an object with exactly one key", where)
        (kind, body), = node.items()
        try:
            if kind == "leaf":
                return Leaf(self.transformer(body), body)
            if kind == "series":
                # temporal order: first_step runs first and sits on the input side
                return Series(self.circuit(body["first_step"], where + ".first_step"),
                              self.circuit(body["second_step"], where + ".second_step"))
            if kind == "parallel":
                return Parallel(self.circuit(body[0], where + "[0]"), self.circuit(body[1], where + "[1]"))
            if kind == "trace":
                consts = body.get("constants")
                if consts is not None:
                    consts = TraceConstants(**{k: float(consts[k]) for k in ("alpha", "eta", "beta", "a_x")})
                return Trace(self.circuit(body["pre"], where + ".pre"), self.space(body["feedback"]),
                             body.get("radius"), consts)
            if kind == "hole":
                return Hole(self.space(body["in"]), self.space(body["out"]), body.get("ball_in"),
                            body.get("ball_out"), body.get("lip"))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", where) from None
        except ParseError:
            raise
        except CircuitError as exc:
            raise ParseError(str(exc), where) from None
        raise ParseError(f"unknown node kind {kind!r}", where)

    def array(self, value, where: str, ndim: Optional[int] = None, allow_inf: bool = False) -> np.ndarray:
        return _num_array(value, where, ndim, allow_inf)


def load_document(path: str) -> Document:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ParseError(str(exc), path) from None
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}", path) from None
    return Document(data, hashlib.sha256(raw).hexdigest(), path)
