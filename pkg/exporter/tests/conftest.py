import numpy as np
import pytest

from embed_exporter import LinearStubBackend

from iknet.saliency import Piece
from iknet.tensor import Tensor, add_bias, matmul, reshape, scale, transpose


class StubAdapter:
    """The exporter stub dressed in the engine's classifier protocol.

    Tokenizer, embeddings, and scorer weights all come from the wrapped
    stub, so a saliency comparison between the two packages isolates the
    saliency computations themselves.
    """

    def __init__(self, stub: LinearStubBackend):
        self.stub = stub
        self.dim = stub.dim
        self._weight_t = Tensor(stub.weight.T.copy())
        self._bias = Tensor(stub.bias)

    def tokenize(self, text: str) -> list[Piece]:
        return [Piece(piece, index) for piece, index in self.stub.tokenize(text)]

    def embed(self, piece_text: str) -> np.ndarray:
        return self.stub.embedding(piece_text)

    def logits(self, embeddings: Tensor) -> Tensor:
        per_piece = add_bias(matmul(embeddings, self._weight_t), self._bias)
        n = embeddings.data.shape[0]
        ones = Tensor(np.ones((1, n)))
        return reshape(scale(matmul(ones, per_piece), 1.0 / n), (self.stub.n_classes,))


@pytest.fixture
def stub() -> LinearStubBackend:
    return LinearStubBackend(dim=16, seed=5)


SAMPLE_TEXTS = [
    "Fed raises rates; markets tumble after the surprise statement.",
    "Oil rallies 4% on renewed supply cuts, lifting energy shares.",
    "Regulators approve the merger and banks climb.",
]
