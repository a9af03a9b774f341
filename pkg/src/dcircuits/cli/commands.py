"""One driver per subcommand.  Each takes a document (or example name) and
parsed flags and returns a :class:`Report`; numeric work is delegated to
the library modules."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..abstraction import (
    AbstractionMap,
    adapter_defect,
    lift_policy,
    verify_approx_hom,
    verify_exact_hom,
    verify_symmetry,
)
from ..bellman import Transformer, make_transformer, monte_carlo_value, solve_fixed_point, solve_linear
from ..circuit import certify, compile, congruence_bound, count_holes
from ..contracts import (
    ContractFn,
    ContractTransformer,
    check_prefixed,
    kleene_lfp,
    lfp_trace,
    lift_parallel,
    lift_series,
    pretrace_maps,
)
from ..core import Dist, FiniteSpace, Kernel, ValueFn, sup_norm_diff
from ..errors import (
    BoundViolation,
    CircuitError,
    NotExact,
    ObligationFailed,
    ParseError,
    UncertifiableTrace,
    UnguardedTrace,
)
from ..extensions import (
    Pomdp,
    change_of_measure_gap,
    factorized_weights,
    martingale_gap,
    state_policy_on_beliefs,
    track_fixed_points,
    verify_belief_equivalence,
)
from .document import Document
from .report import Report

__all__ = ["COMMANDS", "EXAMPLES", "run_example"]


def _labels(space):
    return [str(x) for x in space.labels]


def _value_rows(space, *columns):
    return [(lab,) + tuple(float(c[i]) for c in columns) for i, lab in enumerate(_labels(space))]


def _mc_seed(seed: int, state: int) -> int:
    return int(np.random.SeedSequence([seed, state]).generate_state(1)[0])


# solve ---------------------------------------------------------------------
def cmd_solve(doc: Document, args) -> Report:
    rep = Report("solve", doc.digest, args.seed,
                 {"solver": args.tol, "slack": args.slack, "mc_sigma": args.mc_sigma, "mc_trunc": args.mc_trunc})
    circuit = doc.circuit()
    if count_holes(circuit):
        raise ParseError("solve needs a closed circuit without holes", "$.circuit")
    op = compile(circuit)
    methods = args.methods
    results = {}
    if "linear" in methods:
        results["linear"] = solve_linear(op)
        res = sup_norm_diff(results["linear"], ValueFn(op.in_space, op(results["linear"].values)))
        rep.section("linear", _value_rows(op.in_space, results["linear"].values))
        rep.check("linear_residual", args.tol, res, res <= args.tol)
    if "vi" in methods:
        v, k = solve_fixed_point(op, tol=args.tol)
        res = sup_norm_diff(v, ValueFn(op.in_space, op(v.values)))
        results["vi"] = v
        rep.section("vi", _value_rows(op.in_space, v.values) + [("iterations", k)])
        rep.check("vi_residual", args.tol, res, res <= args.tol)
    if "mc" in methods:
        leaf = doc.section("circuit").get("leaf")
        if leaf is None or leaf not in doc.origins:
            raise ParseError("mc needs a single leaf built from a component and a policy", "$.circuit")
        m, pi = doc.origins[leaf]
        states = range(op.in_space.size)

        def run(s):
            return monte_carlo_value(m, pi, s, n_traj=args.n_traj, seed=_mc_seed(args.seed, s), trunc_eps=args.mc_trunc)

        if args.jobs > 1:
            with ThreadPoolExecutor(args.jobs) as pool:
                est = list(pool.map(run, states))
        else:
            est = [run(s) for s in states]
        means = np.array([e[0] for e in est])
        ses = np.array([e[1] for e in est])
        results["mc"] = ValueFn(op.in_space, means)
        rep.section("mc", _value_rows(op.in_space, means, ses))
    names = [n for n in ("vi", "linear", "mc") if n in results]
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            gap = sup_norm_diff(results[a], results[b])
            if "mc" in (a, b):
                tol = args.mc_sigma * float(ses.max()) + args.mc_trunc
            else:
                tol = args.tol
            rep.check(f"agree_{a}_{b}", tol, gap, gap <= tol)
    return rep


# certify -------------------------------------------------------------------
def cmd_certify(doc: Document, args) -> Report:
    rep = Report("certify", doc.digest, args.seed, {"slack": args.slack})
    circuit = doc.circuit()
    cands = doc.section("candidates", required=False) or []
    fillers = [doc.transformer(n) for n in cands]
    try:
        cert = certify(circuit, fillers)
    except (UncertifiableTrace, UnguardedTrace) as exc:
        path = getattr(exc, "path", None)
        rep.check("certificate", None, None, False, f"{type(exc).__name__}: {exc}" if path is None else f"node {path}: {exc}")
        return rep
    rows = []
    for path in sorted(cert.nodes):
        n = cert.nodes[path]
        row = [path, n.kind, "lip", n.lip, "radius", n.radius]
        if n.constants is not None:
            k = n.constants
            row += ["alpha", k.alpha, "eta", k.eta, "beta", k.beta, "a_x", k.a_x, "feedback_radius", n.feedback_radius]
        rows.append(tuple(row))
    rep.section("nodes", rows)
    rep.section("context", [("L", cert.gain), ("kappa", cert.kappa), ("root_radius", cert.root_radius),
                            ("hole_radius", cert.hole_radius)])
    if len(fillers) == 2:
        try:
            cr = congruence_bound(circuit, fillers[0], fillers[1])
            rep.section("congruence", [("eps", cr.eps), ("bound", cr.bound), ("measured", cr.measured), ("slack", cr.slack)])
            rep.check("congruence", cr.bound, cr.measured, cr.ok)
        except BoundViolation as exc:
            rep.check("congruence", None, None, False, str(exc))
    elif cert.kappa is not None and cert.gain is not None:
        rep.check("certificate", None, None, True, "no candidate pair; constants only")
    else:
        rep.check("certificate", None, None, True)
    return rep


# contract ------------------------------------------------------------------
def _contract_transformer(doc: Document, name: str) -> ContractTransformer:
    sec = doc.section("contracts")
    where = f"$.contracts.transformers.{name}"
    spec = sec.get("transformers", {}).get(name)
    if spec is None:
        raise ParseError(f"unknown contract transformer {name!r}", "$.contracts.transformers")
    x, y = doc.space(spec["in"]), doc.space(spec["out"])
    try:
        return ContractTransformer(x, y, doc.array(spec["cost"], where + ".cost", 1, True), spec["gamma"],
                                   Kernel(x, y, doc.array(spec["trans"], where + ".trans", 2)))
    except CircuitError as exc:
        raise ParseError(str(exc), where) from None
    except ValueError as exc:
        raise ParseError(str(exc), where) from None


def _cfn(doc, space, value, where):
    return ContractFn(space, doc.array(value, where, 1, True))


def cmd_contract(doc: Document, args) -> Report:
    rep = Report("contract", doc.digest, args.seed, {"kleene": args.tol})
    checks = doc.section("contracts").get("checks", [])
    for i, chk in enumerate(checks):
        where = f"$.contracts.checks[{i}]"
        kind = chk.get("kind")
        name = chk.get("name", f"{kind}_{i}")
        try:
            if kind == "lfp":
                t = _contract_transformer(doc, chk["transformer"])
                lfp = kleene_lfp(t, tol=args.tol)
                rep.section(name, _value_rows(t.in_space, lfp.values))
                if np.all(np.isfinite(t.cost)) and t.in_space == t.out_space:
                    lin = solve_linear(Transformer(t.in_space, t.out_space, t.cost, t.gamma, t.trans))
                    gap = sup_norm_diff(lfp.to_value(), lin)
                    rep.check(name, 1e-8, gap, gap <= 1e-8, "kleene vs linear solve")
                else:
                    rep.check(name, None, None, True, "infinite costs; no linear oracle")
            elif kind == "prefixed":
                t = _contract_transformer(doc, chk["transformer"])
                c = _cfn(doc, t.in_space, chk["candidate"], where + ".candidate")
                v = check_prefixed(t, c, tol=args.tol)
                expect = bool(chk.get("expect", True))
                note = "pre-fixed" if v.holds else f"not pre-fixed at {_labels(t.in_space)[v.witness]}"
                if v.holds:
                    rep.section(name, _value_rows(t.in_space, v.image.values, v.lfp.values, c.values))
                rep.check(name, None, None, v.holds == expect, note)
            elif kind == "series":
                t1 = _contract_transformer(doc, chk["first_step"])
                t2 = _contract_transformer(doc, chk["second_step"])
                lv = lift_series(t1, t2, _cfn(doc, t2.out_space, chk["cz"], where + ".cz"),
                                 _cfn(doc, t2.in_space, chk["cy"], where + ".cy"),
                                 _cfn(doc, t1.in_space, chk["cx"], where + ".cx"))
                rep.section(name, _value_rows(t1.in_space, lv.guarantee.values))
                rep.check(name, None, None, True, "guarantee within C_X")
            elif kind == "parallel":
                t1 = _contract_transformer(doc, chk["left"])
                t2 = _contract_transformer(doc, chk["right"])
                lv = lift_parallel(
                    t1, t2,
                    (_cfn(doc, t1.out_space, chk["cy1"], where + ".cy1"), _cfn(doc, t1.in_space, chk["cx1"], where + ".cx1")),
                    (_cfn(doc, t2.out_space, chk["cy2"], where + ".cy2"), _cfn(doc, t2.in_space, chk["cx2"], where + ".cx2")),
                )
                rep.section(name, [(lab, float(v)) for lab, v in zip(_labels(lv.guarantee.space), lv.guarantee.values)])
                rep.check(name, None, None, True, "separable guarantee holds")
            elif kind == "trace":
                t = _contract_transformer(doc, chk["pre"])
                xs, ys, zs = doc.space(chk["x"]), doc.space(chk["y"]), doc.space(chk["z"])
                f_x, f_z = pretrace_maps(t, xs, ys, zs)
                tv = lfp_trace(f_x, f_z, _cfn(doc, ys, chk["cy"], where + ".cy"), _cfn(doc, xs, chk["cx"], where + ".cx"),
                               _cfn(doc, zs, chk["cz"], where + ".cz"), tol=args.tol, seed=args.seed)
                rep.section(name, _value_rows(xs, tv.traced.values) + [("iterations", tv.iterations)])
                rep.check(name, None, None, True, "traced guarantee within C_X")
            else:
                raise ParseError(f"unknown contract check kind {kind!r}", where)
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", where) from None
        except (ObligationFailed, BoundViolation) as exc:
            rep.check(name, None, None, False, str(exc))
    return rep


# abstraction ---------------------------------------------------------------
def cmd_abstraction(doc: Document, args) -> Report:
    rep = Report("abstraction", doc.digest, args.seed, {"slack": args.slack})
    sec = doc.section("abstraction")
    try:
        concrete, abstract_ = doc.mdp(sec["concrete"]), doc.mdp(sec["abstract"])
        phi = AbstractionMap(concrete.states, abstract_.states, doc.array(sec["phi"], "$.abstraction.phi", 1).astype(int))
        pihat = doc.policy(sec["policy"])
        wanted = sec.get("checks", ["approx"])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", "$.abstraction") from None
    for kind in wanted:
        try:
            if kind in ("exact", "optimality"):
                r = verify_exact_hom(concrete, abstract_, phi, pihat, seed=args.seed, optimality=kind == "optimality")
                rep.check(f"{kind}_residual", 1e-10, r.intertwining_residual, True)
                rep.check(f"{kind}_value_gap", 1e-8, r.measured_gap, True)
            elif kind == "approx":
                r = verify_approx_hom(concrete, abstract_, phi, pihat)
                rep.section("approx", [("eps_r", r.eps_r), ("eps_P", r.eps_P), ("v_max", r.v_max)])
                rep.check("approx_value_gap", r.bound, r.measured_gap, r.ok)
            elif kind == "adapter":
                t = make_transformer(concrete, lift_policy(phi, pihat, concrete.actions))
                t_hat = make_transformer(abstract_, pihat)
                radius = max(t.ball_out, t_hat.ball_out)
                r = adapter_defect(t, t_hat, phi, radius)
                rep.check("adapter_defect", r.bound, r.defect, True)
            else:
                raise ParseError(f"unknown abstraction check {kind!r}", "$.abstraction.checks")
        except (NotExact, BoundViolation) as exc:
            rep.check(kind, None, None, False, str(exc))
    sym = sec.get("symmetry")
    if sym is not None:
        m = doc.mdp(sym["component"])
        try:
            r = verify_symmetry(m, doc.array(sym["phi"], "$.abstraction.symmetry.phi", 1).astype(int),
                                doc.array(sym["eta"], "$.abstraction.symmetry.eta", 1).astype(int))
            rep.check("symmetry", r.bound, r.measured_gap, r.ok)
        except BoundViolation as exc:
            rep.check("symmetry", None, None, False, str(exc))
    return rep


# belief --------------------------------------------------------------------
def cmd_belief(doc: Document, args) -> Report:
    rep = Report("belief", doc.digest, args.seed, {"mc_sigma": args.mc_sigma})
    sec = doc.section("pomdp")
    w = "$.pomdp"
    try:
        p = Pomdp.from_arrays(doc.array(sec["trans"], w + ".trans", 3), doc.array(sec["obs"], w + ".obs", 3),
                              doc.array(sec["reward"], w + ".reward", 2), sec["gamma"],
                              doc.array(sec["init"], w + ".init", 1))
        horizon = int(sec["horizon"])
        pol = sec.get("policy", "uniform")
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", w) from None
    except CircuitError as exc:
        raise ParseError(str(exc), w) from None
    ns, na = p.states.size, p.actions.size
    pi = np.full((ns, na), 1.0 / na) if pol == "uniform" else doc.array(pol, w + ".policy", 2)
    r = verify_belief_equivalence(p, state_policy_on_beliefs(pi), horizon, n_traj=args.n_traj, seed=args.seed,
                                  n_sigma=args.mc_sigma)
    rep.section("belief", [("tree_value", r.exact), ("mc_mean", r.mc_mean), ("mc_std_error", r.mc_std_error),
                           ("tree_nodes", r.n_nodes)])
    rep.check("belief_vs_mc", r.tolerance, abs(r.exact - r.mc_mean), r.ok)
    return rep


# ope -----------------------------------------------------------------------
def cmd_ope(doc: Document, args) -> Report:
    rep = Report("ope", doc.digest, args.seed, {"exact": 1e-12})
    sec = doc.section("ope")
    w = "$.ope"
    try:
        m = doc.component(sec["component"])
        init = Dist(m.s_in, doc.array(sec["init"], w + ".init", 1))
        pi, mu = doc.policy(sec["target"]), doc.policy(sec["behavior"])
        horizon = int(sec["horizon"])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", w) from None
    disc = m.gamma ** np.arange(horizon)
    rho = np.asarray(m.rho)

    def ret(traj):
        return float(disc @ rho[traj.rewards])

    com = change_of_measure_gap(m, init, pi, mu, horizon, ret)
    mart = martingale_gap(m, init, pi, mu, horizon)
    rep.check("change_of_measure", 1e-12, com, com <= 1e-12)
    rep.check("martingale", 1e-12, mart, mart <= 1e-12)
    prod = sec.get("product")
    if prod is not None:
        try:
            m2 = doc.component(prod["component"])
            init2 = Dist(m2.s_in, doc.array(prod["init"], w + ".product.init", 1))
            fr = factorized_weights(m, m2, init, init2, (pi, doc.policy(prod["target"])),
                                    (mu, doc.policy(prod["behavior"])), horizon)
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", w + ".product") from None
        rep.section("product", [("prefixes", fr.n_prefixes), ("second_moment", fr.second_moment_global),
                                ("module_moments", fr.second_moments[0], fr.second_moments[1])])
        rep.check("weight_factorization", 1e-12, fr.max_weight_error, fr.max_weight_error <= 1e-12)
        rep.check("log_additivity", 1e-10, fr.log_additivity_gap, fr.log_additivity_gap <= 1e-10)
    return rep


# track ---------------------------------------------------------------------
def cmd_track(doc: Document, args) -> Report:
    rep = Report("track", doc.digest, args.seed, {"slack": args.slack})
    sec = doc.section("track")
    ops = [doc.transformer(n) for n in sec.get("transformers", [])]
    for mode in sec.get("modes", ["exact", "one-step"]):
        try:
            r = track_fixed_points(ops, mode=mode)
        except BoundViolation as exc:
            rep.check(mode, None, None, False, str(exc))
            continue
        rows = [(t, r.eta[t], r.measured[t], r.bounds[t]) for t in range(r.eta.size)]
        rep.section(f"{mode} (t eta measured bound)", rows)
        rep.check(f"{mode}_per_step", None, None, True, f"{r.eta.size} steps, 0 violations")
        if r.cumulative_measured is not None:
            rep.check(f"{mode}_cumulative", float(r.cumulative_bounds[-1]), float(r.cumulative_measured[-1]), True)
    return rep


# examples ------------------------------------------------------------------
def _example_two_module(seed: int, rep: Report) -> None:
    from ..instances import random_oddc, random_policy
    from ..robustness import PerturbationSpec, TwoModuleCircuit, run_two_module_robustness

    rng = np.random.default_rng(seed)
    m1 = random_oddc(rng, 3, 2, 4, gamma=0.5)
    m2 = random_oddc(rng, 4, 2, 3, gamma=0.5, s_in=m1.s_out, s_out=m1.s_in)
    base = TwoModuleCircuit(m1, m2, random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions))
    r = run_two_module_robustness(base, PerturbationSpec(target=2, eps_r=0.1, eps_P=0.0, seed=seed))
    rep.section("chain", [("gamma", r.gamma), ("v_max", r.v_max),
                          ("eps_formula", r.eps_formula[0], r.eps_formula[1]),
                          ("eps_exact", r.eps_exact[0], r.eps_exact[1]),
                          ("macro", r.macro_exact, r.macro_bound),
                          ("gap", r.measured_gap, r.gap_bound), ("slack", r.slack)])
    for name in sorted(r.links):
        rep.check(name, None, None, r.links[name])
    rep.check("fixed_point_gap", r.gap_bound, r.measured_gap, r.ok)


def _example_parallel(seed: int, rep: Report) -> None:
    from ..instances import random_oddc, random_policy
    from ..robustness import run_parallel_factorization

    rng = np.random.default_rng(seed)
    m1 = random_oddc(rng, 3, 2, gamma=0.9)
    m2 = random_oddc(rng, 4, 2, gamma=0.9, s_in=FiniteSpace.of_size("t", 4))
    r = run_parallel_factorization(m1, m2, random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions))
    rep.section("factors", [("v1",) + tuple(r.v1), ("v2",) + tuple(r.v2)])
    rep.check("additive_factorization", 1e-8, r.max_error, r.ok)
    rep.check("coupled_control_gap_positive", 0.0, r.coupled_gap, r.coupled_gap > 1e-6, "negative control")


EXAMPLES = {"two_module_robustness": _example_two_module, "parallel_factorization": _example_parallel}


def run_example(name: str, args) -> Report:
    if name not in EXAMPLES:
        raise ParseError(f"unknown example {name!r}; choose from {', '.join(sorted(EXAMPLES))}", "example")
    digest = hashlib.sha256(f"example:{name}".encode()).hexdigest()
    rep = Report(f"example {name}", digest, args.seed, {"slack": args.slack})
    try:
        EXAMPLES[name](args.seed, rep)
    except BoundViolation as exc:
        rep.check(name, None, None, False, str(exc))
    return rep


COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "contract": cmd_contract,
    "abstraction": cmd_abstraction,
    "belief": cmd_belief,
    "ope": cmd_ope,
    "track": cmd_track,
}
