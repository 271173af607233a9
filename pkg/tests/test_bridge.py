import socket
import sys
import threading

import numpy as np
import pytest

from icsbi.backends import BackendError, ContextSet, ReferenceBackend
from icsbi.backends.bridge import BridgeBackend, BridgeError
from icsbi.backends.server import serve

SERVER_CMD = [sys.executable, "-m", "icsbi.backends.server"]


@pytest.fixture()
def bridged():
    backend = BridgeBackend.spawn(SERVER_CMD)
    yield backend
    backend.shutdown()


def small_context(rng, m=40, d=2):
    feats = rng.standard_normal((m, d))
    targets = feats[:, 0] + 0.1 * rng.standard_normal(m)
    return ContextSet(features=feats, targets=targets)


class TestHandshake:
    def test_capabilities_from_reference_server(self, bridged):
        assert bridged.capabilities.max_context == 10_000
        assert bridged.capabilities.max_features == 500

    def test_version_mismatch_rejected(self, tmp_path):
        peer = tmp_path / "bad_version.py"
        peer.write_text(
            "import json, sys\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    print(json.dumps({'id': req['id'], 'status': 'ok',\n"
            "                      'payload': {'version': '0', 'capabilities': {}},\n"
            "                      'error': None}), flush=True)\n"
        )
        with pytest.raises(BridgeError, match="version mismatch"):
            BridgeBackend.spawn([sys.executable, str(peer)])

    def test_shutdown_clean_exit(self):
        backend = BridgeBackend.spawn(SERVER_CMD)
        backend.shutdown()
        assert backend._process.wait(timeout=30) == 0


class TestRoundTrip:
    def test_regress_context_round_trips_bit_exactly(self, bridged):
        # 4x2 context with awkward doubles: the loopback predictive must match
        # the direct reference computation bitwise.
        feats = np.array([[0.1, 1 / 3], [-1e-8, 2.0], [5.0, -0.7], [1e8, 0.25]])
        targets = np.array([0.1, -2.0, 1 / 7, 3.0])
        ctx = ContextSet(features=feats, targets=targets)
        queries = np.array([[0.0, 0.5]])
        direct = ReferenceBackend().regress_predict(ctx, queries)[0]
        remote = bridged.regress_predict(ctx, queries)[0]
        np.testing.assert_array_equal(remote.grid, direct.grid)
        np.testing.assert_array_equal(remote.log_density, direct.log_density)

    def test_structured_error_for_mismatched_widths(self, bridged):
        # Bypass client-side validation to prove the peer answers with a
        # structured error payload rather than dying.
        with pytest.raises(BackendError, match="peer error"):
            bridged._call(
                "regress",
                {
                    "features": [[0.0, 1.0], [1.0, 2.0]],
                    "targets": [0.0, 1.0],
                    "queries": [[0.0, 1.0, 2.0]],
                    "seed": None,
                    "grid_size": 64,
                },
            )
        # connection still serves afterwards
        rng = np.random.default_rng(0)
        ctx = small_context(rng)
        assert len(bridged.regress_predict(ctx, rng.standard_normal((1, 2)))) == 1

    def test_unknown_op_is_structured_error(self, bridged):
        with pytest.raises(BackendError, match="unknown op"):
            bridged._call("frobnicate", {})


class TestOutOfOrderResponses:
    def test_client_reassociates_by_id(self, tmp_path):
        # Peer answers every batch of two requests in reverse order.
        peer = tmp_path / "reorder.py"
        peer.write_text(
            "import json, sys\n"
            "def reply(req):\n"
            "    if req['op'] == 'handshake':\n"
            "        return {'id': req['id'], 'status': 'ok', 'error': None,\n"
            "                'payload': {'version': '1', 'capabilities': {'max_context': 10, 'max_features': 5}}}\n"
            "    return {'id': req['id'], 'status': 'ok', 'error': None,\n"
            "            'payload': {'classes': [0.0, 1.0], 'probabilities': [[req['id'], 0.0]]}}\n"
            "line = sys.stdin.readline()\n"
            "print(json.dumps(reply(json.loads(line))), flush=True)\n"
            "while True:\n"
            "    a = sys.stdin.readline()\n"
            "    b = sys.stdin.readline()\n"
            "    if not a or not b:\n"
            "        break\n"
            "    for req in (json.loads(b), json.loads(a)):\n"
            "        print(json.dumps(reply(req)), flush=True)\n"
        )
        backend = BridgeBackend.spawn([sys.executable, str(peer)])
        results = {}

        def call(idx):
            payload = backend._call("classify", {"idx": idx})
            results[idx] = payload["probabilities"][0][0]

        threads = [threading.Thread(target=call, args=(i,)) for i in (1, 2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        backend.close()
        # ids 1 and 2 (handshake took id 0); each caller saw its own id echoed
        assert results == {1: 1.0, 2: 2.0}


class TestLoopbackParity:
    def test_bridge_matches_direct_backend(self, bridged):
        rng = np.random.default_rng(1)
        direct = ReferenceBackend()
        for _ in range(5):
            ctx = small_context(rng, m=60, d=3)
            queries = rng.standard_normal((4, 3))
            remote_preds = bridged.regress_predict(ctx, queries, seed=5)
            direct_preds = direct.regress_predict(ctx, queries, seed=5)
            for rp, dp in zip(remote_preds, direct_preds):
                np.testing.assert_array_equal(rp.grid, dp.grid)
                np.testing.assert_array_equal(rp.log_density, dp.log_density)
                sampler = np.random.default_rng(9)
                np.testing.assert_array_equal(
                    rp.sample(16, np.random.default_rng(9)), dp.sample(16, sampler)
                )

    def test_bridge_classify_matches_direct(self, bridged):
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((100, 2))
        labels = (feats[:, 0] > 0).astype(float)
        ctx = ContextSet(features=feats, targets=labels)
        queries = rng.standard_normal((10, 2))
        classes_r, probs_r = bridged.classify_predict(ctx, queries)
        classes_d, probs_d = ReferenceBackend().classify_predict(ctx, queries)
        np.testing.assert_array_equal(classes_r, classes_d)
        np.testing.assert_array_equal(probs_r, probs_d)


class TestTcpTransport:
    def test_regress_over_loopback_socket(self):
        server_sock = socket.create_server(("127.0.0.1", 0))
        port = server_sock.getsockname()[1]

        def run_server():
            conn, _ = server_sock.accept()
            with conn, conn.makefile("r") as r, conn.makefile("w") as w:
                serve(ReferenceBackend(), r, w)
            server_sock.close()

        thread = threading.Thread(target=run_server, daemon=True)
        thread.start()
        backend = BridgeBackend.open(f"tcp:127.0.0.1:{port}")
        rng = np.random.default_rng(3)
        ctx = small_context(rng)
        preds = backend.regress_predict(ctx, rng.standard_normal((2, 2)))
        assert len(preds) == 2
        backend.shutdown()
        thread.join(timeout=30)
