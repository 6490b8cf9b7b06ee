import numpy as np
import pytest

from ctlab.bounds import (
    BoundReport,
    ProbeConfig,
    alignment_eps,
    corollary_reports,
    lse_approx_error,
    report_to_text,
    theorem1_check,
    theorem3_check,
    theorem4_check,
    variance_terms,
)
from ctlab.fixtures import (
    reference_transforms,
    reference_world,
    toy_transforms,
    toy_world,
)
from ctlab.objectives import (
    Embedding,
    LinearHead,
    McConfig,
    ce_risk,
    fit_linear_head,
    mean_head,
    random_embedding,
)
from ctlab.svd import TruncationSpec
from ctlab.world import (
    Transform,
    WorldSpec,
    build_augmented_space,
    generate_world,
    preprocess_world,
)


def toy_space():
    return build_augmented_space(toy_world(), toy_transforms())


def constant_embedding(n, k=3):
    table = np.zeros((n, k))
    table[:, 0] = 1.0
    return Embedding(table=table, normalized=True)


def identity_only_space():
    w = reference_world()
    return build_augmented_space(
        w, [Transform(id="i", kind="identity", probability=1.0)]
    )


class TestVarianceTerms:
    def test_constant_embedding_vanishes(self):
        space = toy_space()
        vt = variance_terms(constant_embedding(space.n), space)
        assert vt.V == 0.0
        assert vt.V_minus == 0.0
        assert vt.V_neg == 0.0
        assert abs(vt.x_plus_mass - 0.75) < 1e-12
        assert abs(vt.x_minus_mass - 0.25) < 1e-12

    def test_no_false_positives_drops_v_minus(self):
        space = identity_only_space()
        vt = variance_terms(random_embedding(space.n, 3, seed=1), space)
        assert vt.V_minus is None
        assert vt.x_minus_mass == 0.0

    def test_brute_force_oracle(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=8)
        F = f.table
        head = mean_head(f, space)
        mu = head.mu.T[space.labels]
        vt = variance_terms(f, space)
        v_num = vm_num = v_mass = vm_mass = 0.0
        for x in range(space.n):
            for y in range(space.n):
                pw = space.joint[x, y]
                if pw == 0:
                    continue
                d = float(np.sum((F[y] - mu[x]) ** 2))
                if space.labels[x] == space.labels[y]:
                    v_num += pw * float(np.sum((F[x] - mu[x]) ** 2))
                    v_mass += pw
                else:
                    vm_num += pw * d
                    vm_mass += pw
        assert abs(vt.V - v_num / v_mass) < 1e-12
        assert abs(vt.V_minus - vm_num / vm_mass) < 1e-12


class TestLseApproxError:
    def test_constant_embedding_exact(self):
        space = toy_space()
        mean, std = lse_approx_error(constant_embedding(space.n), space, 2, 4, 0)
        assert mean == 0.0
        assert std == 0.0

    def test_deterministic(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=2)
        assert lse_approx_error(f, space, 3, 6, 5) == lse_approx_error(f, space, 3, 6, 5)

    def test_error_shrinks_with_m(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=2)
        small, _ = lse_approx_error(f, space, 1, 64, 0)
        large, _ = lse_approx_error(f, space, 256, 64, 0)
        assert large < small

    def test_validation(self):
        space = toy_space()
        f = constant_embedding(space.n)
        with pytest.raises(ValueError):
            lse_approx_error(f, space, 1, 1, 0)
        with pytest.raises(ValueError):
            lse_approx_error(f, space, 0, 2, 0)


class TestAlignmentEps:
    def test_constant_embedding(self):
        space = toy_space()
        eps = alignment_eps(constant_embedding(space.n), space)
        assert not eps.empty
        assert eps.eps_min == 0.0
        assert eps.eps_max == 0.0

    def test_exhaustive_oracle(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=4)
        F = f.table
        dists = []
        for x in range(space.n):
            for y in range(space.n):
                if space.joint[x, y] > 0 and space.labels[x] != space.labels[y]:
                    dists.append(float(np.linalg.norm(F[x] - F[y])))
        eps = alignment_eps(f, space)
        assert abs(eps.eps_min - min(dists)) < 1e-12
        assert abs(eps.eps_max - max(dists)) < 1e-12
        assert eps.argmin_pair and eps.argmax_pair

    def test_empty_false_positive_support(self):
        space = identity_only_space()
        eps = alignment_eps(random_embedding(space.n, 3, seed=1), space)
        assert eps.empty
        assert eps.eps_min == 0.0 and eps.eps_max == 0.0


class TestSandwich:
    def test_constant_embedding_sits_on_lower_edge(self):
        # gap = log K - log(M + 1) equals the lower bound exactly and the
        # measured envelope is 0
        space = toy_space()
        f = constant_embedding(space.n)
        rep = theorem1_check(f, space, M=1)
        assert rep.verdict == "holds"
        assert abs(rep.slack) < 1e-12
        assert abs(rep.terms["gap"]) < 1e-12  # log 2 - log 2
        assert rep.terms["envelope"] < 1e-12
        assert rep.terms["infonce_exact"]

    def test_random_embeddings_hold(self):
        space = toy_space()
        for seed in range(30):
            f = random_embedding(space.n, 3, seed=seed)
            for M in (1, 2):
                rep = theorem1_check(f, space, M)
                assert rep.verdict == "holds", (seed, M, rep)

    def test_slack_recomputable_from_terms(self):
        space = toy_space()
        rep = theorem1_check(random_embedding(space.n, 4, seed=3), space, 2)
        t = rep.terms
        want = min(t["upper"] - t["gap"], t["gap"] - t["lower"])
        assert abs(rep.slack - want) < 1e-12

    def test_consistent_space_note(self):
        space = identity_only_space()
        rep = theorem1_check(random_embedding(space.n, 3, seed=0), space, 1)
        assert rep.terms["V_minus"] is None
        assert "V_minus absent" in rep.note

    def test_requires_normalized(self):
        space = toy_space()
        f = Embedding(np.ones((space.n, 2)), normalized=False)
        with pytest.raises(ValueError):
            theorem1_check(f, space, 1)
        with pytest.raises(ValueError):
            theorem3_check(f, space, 1)

    def test_alignment_variant_holds(self):
        space = toy_space()
        for seed in range(30):
            rep = theorem3_check(random_embedding(space.n, 3, seed=seed), space, 1)
            assert rep.verdict == "holds", (seed, rep)

    def test_alignment_variant_consistent_reduction(self):
        space = identity_only_space()
        rep = theorem3_check(random_embedding(space.n, 3, seed=2), space, 1)
        assert rep.terms["no_false_positives"]
        assert "consistent form" in rep.note


class TestDownstreamBound:
    def test_toy_values(self):
        rep = theorem4_check(toy_world(), toy_transforms(), k=2)
        t = rep.terms
        assert abs(t["alpha_q"] - 0.25) < 1e-12
        assert abs(t["lambda_k_q"] - 0.5) < 1e-12
        assert abs(t["lambda_k1_q"] - 1.0) < 1e-12
        assert abs(t["bound"] - 3.0) < 1e-12  # 4*alpha/lambda_3 + 8*alpha
        assert t["probe_error"] == 0.0
        assert rep.verdict == "holds_vacuously"
        assert "bound >= 1" in rep.note

    def test_error_free_world_meets_zero_bound(self):
        spec = WorldSpec(
            K=3, per_class=2, m=12, m_prime=12, q_star=3,
            nuisance_rank=1, nuisance_confusion=0.0, noise_scale=0.0, seed=11,
        )
        w = generate_world(spec)
        from ctlab.world import class_pattern

        # flips at rho < 1/2 never cross the boundary on clean payloads
        transforms = [Transform(id="i", kind="identity", probability=0.64)]
        for c in range(3):
            transforms.append(
                Transform(
                    id=f"flip_{c}",
                    kind="additive_pattern",
                    probability=0.12,
                    pattern=class_pattern(w, c, (c + 1) % 3, 0.35),
                )
            )
        rep = theorem4_check(w, transforms, k=3)
        assert rep.terms["alpha_q"] == 0.0
        assert rep.terms["bound"] == 0.0
        assert rep.terms["probe_error"] == 0.0
        assert rep.verdict == "holds"

    def test_reference_world_at_semantic_rank(self):
        w = reference_world()
        transforms = reference_transforms(w)
        wq = preprocess_world(w, TruncationSpec(mode="keep_top_q", q=3))
        rep = theorem4_check(wq, transforms, k=3)
        t = rep.terms
        assert abs(t["alpha_q"] - 0.04) < 1e-9
        assert t["bound"] < 1.0
        assert t["probe_error"] == 0.0
        assert rep.verdict == "holds"

    def test_zero_lambda_leaves_bound_undefined(self):
        w = reference_world()
        identity = [Transform(id="i", kind="identity", probability=1.0)]
        rep = theorem4_check(w, identity, k=1)
        assert rep.verdict == "holds_vacuously"
        assert rep.terms["bound"] is None
        assert "undefined" in rep.note

    def test_k_validated(self):
        with pytest.raises(ValueError):
            theorem4_check(toy_world(), toy_transforms(), k=0)
        with pytest.raises(ValueError):
            theorem4_check(toy_world(), toy_transforms(), k=99)


class TestCorollaries:
    def test_zero_head_withheld(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=1)
        reports = corollary_reports(
            f, space, 1, McConfig(), LinearHead(W=np.zeros((3, 2)))
        )
        assert len(reports) == 2
        for rep in reports:
            assert rep.verdict == "holds_vacuously"
            assert "optimization-inadequate" in rep.note

    def test_fitted_head_holds(self):
        space = toy_space()
        f = random_embedding(space.n, 3, seed=6)
        head = fit_linear_head(f, space, steps=300, step_size=2.0)
        reports = corollary_reports(f, space, 1, McConfig(), head)
        assert [r.theorem for r in reports] == [
            "corollary_theorem1",
            "corollary_theorem3",
        ]
        for rep in reports:
            assert rep.verdict == "holds", rep
            assert rep.terms["head_vs_mean_ok"]
            assert rep.terms["ce_linear"] <= rep.terms["ce_mean"] + 1e-3


class TestReportText:
    def test_stable_and_complete(self):
        rep = BoundReport(
            theorem="demo",
            verdict="holds",
            slack=0.5,
            terms={"b": 1.0, "a": None, "c": True},
            note="",
        )
        text = report_to_text(rep)
        assert text == (
            "theorem = demo\n"
            "verdict = holds\n"
            "slack = 0.5\n"
            "terms.a = none\n"
            "terms.b = 1.0\n"
            "terms.c = true\n"
            "note = \n"
        )

    def test_floats_round_trip(self):
        rep = BoundReport(
            theorem="demo", verdict="holds", slack=1.0 / 3.0, terms={"x": 0.1 + 0.2}
        )
        text = report_to_text(rep)
        line = [l for l in text.splitlines() if l.startswith("terms.x")][0]
        assert float(line.split(" = ")[1]) == 0.1 + 0.2
