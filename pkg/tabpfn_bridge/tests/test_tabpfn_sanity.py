"""End-to-end sanity check with the real TabPFN model (needs weights).

Skipped automatically when the tabpfn package or its pre-trained weights are
unavailable. The inference engine is driven purely through its command-line
interface, with this server attached via the wire protocol.
"""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest


def _tabpfn_available() -> bool:
    try:
        from tabpfn import TabPFNRegressor

        TabPFNRegressor(device="cpu").fit(
            np.zeros((4, 1)), np.arange(4.0)
        )  # triggers weight loading
        return True
    except Exception:
        return False


requires_tabpfn = pytest.mark.skipif(
    not _tabpfn_available(), reason="tabpfn package or model weights unavailable"
)
requires_cli = pytest.mark.skipif(
    shutil.which("icsbi") is None, reason="icsbi CLI not installed"
)


@requires_tabpfn
@requires_cli
def test_two_moons_posterior_bimodal_and_close_to_abc(tmp_path):
    from sklearn.mixture import GaussianMixture

    bridge = f"bridge:{sys.executable} -m tabpfn_bridge"
    out = tmp_path / "infer"
    subprocess.run(
        [
            "icsbi", "infer", "--task", "two_moons", "--sims", "1000",
            "--samples", "1000", "--seed", "0", "--x-obs", "0.05,-0.35",
            "--backend", bridge, "--out", str(out),
        ],
        check=True,
        timeout=3600,
    )
    posterior = np.loadtxt(out / "posterior.csv", delimiter=",", skiprows=1)

    # reference posterior by rejection ABC on a large prior sample
    sims = tmp_path / "abc.csv"
    subprocess.run(
        ["icsbi", "simulate", "--task", "two_moons", "--n", "200000", "--seed", "7",
         "--out", str(sims)],
        check=True,
        timeout=3600,
    )
    table = np.loadtxt(sims, delimiter=",", skiprows=1)
    thetas, xs = table[:, :2], table[:, 2:4]
    dist = np.linalg.norm(xs - np.array([0.05, -0.35]), axis=1)
    accepted = thetas[dist <= np.quantile(dist, 0.005)][:1000]

    gm = GaussianMixture(n_components=2, random_state=0).fit(posterior)
    assert gm.weights_.min() > 0.2

    ref_file = tmp_path / "ref.csv"
    post_file = tmp_path / "post.csv"
    np.savetxt(ref_file, accepted, delimiter=",", header="theta_0,theta_1", comments="")
    np.savetxt(post_file, posterior, delimiter=",", header="theta_0,theta_1", comments="")
    eval_out = tmp_path / "c2st.json"
    subprocess.run(
        ["icsbi", "eval", "c2st", "--samples-a", str(post_file), "--samples-b", str(ref_file),
         "--seed", "1", "--out", str(eval_out)],
        check=True,
        timeout=3600,
    )
    accuracy = json.loads(eval_out.read_text())["accuracy"]
    assert accuracy <= 0.75
