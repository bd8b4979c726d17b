"""Score one hand-built frame term by term.

A left hand holds an object; the right side is empty.  The script fills a
handful of weights by hand, then shows how each potential term contributes
and how coordinate ascent moves away from the classifier argmaxes once the
context weights disagree with them.

    python3 demos/01_scoring_one_frame.py
"""
import numpy as np

from homctx.inference import InferenceConfig, infer, initialize
from homctx.labels import gtea_label_space
from homctx.potentials import Evidence, ModelParams, SideEvidence, score_terms

space = gtea_label_space()
na, ng, no = space.sizes
grasp_names, attr_names, action_names = space.grasp_names(), space.attribute_names(), space.action_names()


def peaked(n, idx, hi):
    v = np.full(n, (1.0 - hi) / (n - 1))
    v[idx] = hi
    return v


# one left hand candidate with a single object candidate at the regressed box
hand = np.array([[200.0, 300.0, 90.0, 110.0]])
offset = np.array([[0.3, -0.4, 1.2, 0.8]])
obj = np.array([[[227.0, 256.0, 108.0, 88.0]]])
grasp_scores = peaked(ng, 2, 0.40)  # the grasp classifier mildly prefers grasp 3
grasp_scores[6] = 0.35  # ... but grasp 7 is close behind
left = SideEvidence(hand, np.array([[0.05, 0.90, 0.05]]), grasp_scores[None], offset, obj,
                    peaked(no, 4, 0.7)[None, None])
evidence = Evidence(peaked(na, 1, 0.6), (left, SideEvidence.empty(ng, no)))

params = ModelParams.zeros(space)
params.xi[:] = np.eye(na)
params.eta[1:] = np.eye(ng)
params.lam[1:] = np.eye(no)
params.zeta[:] = (0.0, 1.0, 1.0)
params.gamma[:] = 1.0

start = initialize(evidence, params)
print("classifier argmaxes:")
print(f"  action {action_names[start.action]}, left grasp {grasp_names[start.grasp[0]]}, "
      f"left attribute {attr_names[start.attribute[0]]}")

# context: grasp 7 goes with attribute 5 during the second action
params.beta[7, 5] = 0.5
params.alpha[1, 7, 0, 5, 0] = 0.5
res = infer(evidence, params, InferenceConfig())
names = ("functional", "physical", "spatial", "grasp evidence", "object evidence", "action evidence")
print("\nwith context weights:")
print(f"  action {action_names[res.state.action]}, left grasp {grasp_names[res.state.grasp[0]]}, "
      f"left attribute {attr_names[res.state.attribute[0]]}")
for name, value in zip(names, score_terms(params, res.state, evidence.filtered(0.8))):
    print(f"  {name:16s} {value:+.4f}")
print(f"  {'total':16s} {res.potential:+.4f}  after {res.iterations_used} sweeps, trace {np.round(res.trace, 4).tolist()}")
