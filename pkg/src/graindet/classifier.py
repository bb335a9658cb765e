"""Phase two: small conv-net classifying fixed-size crops.

Architecture: a stack of 3x3 conv + ReLU + 2x max-pool blocks, one dense
hidden layer with optional dropout, and a softmax output. Crops whose size
differs from the configured input are resampled on the way in.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import net
from .roi import resize_image


class _ClassifierNet:
    def __init__(self, input_h, input_w, conv_channels, dense_units, n_classes,
                 dropout, seed, dtype=np.float32):
        rng = np.random.default_rng(seed)
        layers = []
        prev = 3
        h, w = input_h, input_w
        for i, ch in enumerate(conv_channels):
            layers.append(net.Conv2d(prev, ch, 3, padding=1, rng=rng,
                                     dtype=dtype, name=f"block{i}.conv"))
            layers.append(net.ReLU())
            layers.append(net.MaxPool2d(2, 2))
            prev = ch
            h, w = h // 2, w // 2
        layers.append(net.Flatten())
        layers.append(net.Dense(h * w * prev, dense_units, rng=rng, dtype=dtype,
                                name="dense"))
        layers.append(net.ReLU())
        if dropout > 0.0:
            layers.append(net.Dropout(dropout, seed=seed + 1))
        layers.append(net.Dense(dense_units, n_classes, rng=rng, dtype=dtype,
                                name="logits"))
        self.stack = net.Sequential(layers)

    def params(self):
        return self.stack.params()


class CropClassifier(BaseEstimator, ClassifierMixin):
    """Multinomial conv-net classifier over (H, W, 3) float images.

    fit accepts a list/array of images plus integer or string labels;
    predict returns labels of the same kind. Ties in the output
    distribution resolve to the lowest class index. Deterministic for a
    fixed seed at fixed input sizes.
    """

    def __init__(
        self,
        input_width=300,
        input_height=250,
        conv_channels=(8, 16, 24, 32),
        dense_units=64,
        dropout=0.2,
        learning_rate=1e-4,
        optimizer="adam",
        epochs=10,
        batch_size=16,
        class_names=None,
        seed=0,
    ):
        self.input_width = input_width
        self.input_height = input_height
        self.conv_channels = conv_channels
        self.dense_units = dense_units
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_names = class_names
        self.seed = seed

    def _validate(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def _resolve_classes(self, y):
        if self.class_names is not None:
            self.classes_ = list(self.class_names)
        else:
            self.classes_ = sorted(set(y))
        if len(self.classes_) < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes_}")
        self._index = {c: i for i, c in enumerate(self.classes_)}

    def _build(self):
        self._validate()
        self.net_ = _ClassifierNet(
            self.input_height, self.input_width, tuple(self.conv_channels),
            self.dense_units, len(self.classes_), self.dropout, self.seed,
        )

    def _prepare(self, images) -> np.ndarray:
        batch = [
            resize_image(np.asarray(img, dtype=np.float32),
                         self.input_width, self.input_height)
            for img in images
        ]
        return np.stack(batch)

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"got {len(X)} images but {len(y)} labels")
        self._resolve_classes(y)
        self._build()
        labels = np.array([self._index[v] for v in y], dtype=np.int64)
        data = self._prepare(X)
        params = self.net_.params()
        opt = net.make_optimizer(self.optimizer, params, self.learning_rate)
        rng = np.random.default_rng((self.seed, 0xC1))
        self.history_ = []
        n = len(data)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            correct = 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                xb, yb = data[idx], labels[idx]
                logits = self.net_.stack.forward(xb, train=True)
                losses, g = net.softmax_cross_entropy(logits, yb)
                total += float(losses.sum())
                correct += int((logits.argmax(axis=1) == yb).sum())
                opt.zero_grad()
                self.net_.stack.backward((g / len(idx)).astype(logits.dtype))
                opt.step()
            self.history_.append({
                "epoch": epoch,
                "loss": total / n,
                "accuracy": correct / n,
            })
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("classifier has no weights; call fit or load_weights")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        data = self._prepare(X)
        out = []
        for start in range(0, len(data), self.batch_size):
            logits = self.net_.stack.forward(data[start:start + self.batch_size],
                                             train=False)
            out.append(net.softmax(logits))
        return np.concatenate(out, axis=0)

    def predict(self, X) -> list:
        probs = self.predict_proba(X)
        return [self.classes_[int(i)] for i in probs.argmax(axis=1)]

    def classify(self, image) -> tuple:
        """Label and probability vector for a single crop."""
        probs = self.predict_proba([image])[0]
        return self.classes_[int(probs.argmax())], probs

    def save_weights(self, path):
        self._check_fitted()
        net.save_checkpoint(path, {p.name: p.data for p in self.net_.params()})
        return self

    def load_weights(self, path, classes=None):
        """Build from config and load a checkpoint. ``classes`` overrides
        ``class_names`` when neither fit nor config fixed the label set."""
        if classes is not None:
            self.classes_ = list(classes)
        elif self.class_names is not None:
            self.classes_ = list(self.class_names)
        elif not hasattr(self, "classes_"):
            raise ValueError("class list unknown; pass classes= or set class_names")
        self._index = {c: i for i, c in enumerate(self.classes_)}
        self._build()
        net.load_into(self.net_.params(), path)
        return self
