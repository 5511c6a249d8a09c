import base64
import json
import socket
import threading

import numpy as np
import pytest

from refsal_bridge.server import _Connection


def pack_mask(mask: np.ndarray) -> dict:
    bits = np.packbits(mask.astype(np.uint8).reshape(-1), bitorder="big")
    return {
        "h": int(mask.shape[0]),
        "w": int(mask.shape[1]),
        "bits": base64.b64encode(bits.tobytes()).decode("ascii"),
    }


def unpack_tensor(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f4").reshape(obj["shape"]).copy()


class WireClient:
    """Raw line-framed JSON peer used to drive a server in tests."""

    def __init__(self, sock):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.writer = sock.makefile("wb")

    def send(self, frame: dict) -> None:
        self.writer.write(json.dumps(frame).encode("utf-8") + b"\n")
        self.writer.flush()

    def send_raw(self, payload: bytes) -> None:
        self.writer.write(payload)
        self.writer.flush()

    def receive(self) -> dict:
        line = self.reader.readline()
        assert line, "server closed the connection"
        return json.loads(line.decode("utf-8"))

    def hello(self) -> dict:
        self.send({"type": "hello", "version": 1})
        return self.receive()

    def forward(self, image, tokens, mask, mask_mode="feature") -> dict:
        self.send({
            "type": "forward",
            "image": image,
            "tokens": list(tokens),
            "mask": pack_mask(mask),
            "mask_mode": mask_mode,
        })
        return self.receive()

    def close(self):
        self.sock.close()


@pytest.fixture
def wire_pair():
    """A WireClient talking to an in-process _Connection thread."""
    made = []

    def make(session):
        client_sock, server_sock = socket.socketpair()

        def run():
            with server_sock:
                reader = server_sock.makefile("rb")
                writer = server_sock.makefile("wb")
                _Connection(reader, writer, session, threading.Lock()).serve()

        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        client = WireClient(client_sock)
        made.append(client)
        return client

    yield make
    for client in made:
        client.close()
