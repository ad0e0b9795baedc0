"""Estimator-style wrappers around the detectors.

Every detector follows the same protocol: construct with hyper-parameters,
``fit`` (a no-op check for the model-based detectors, training for the
learned ones), then ``predict(Y, H, snr_db)`` returning decided bits.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .channel import snr_to_es
from .detectors import (
    DetectorOutput,
    ML_SEARCH_CAP,
    SearchSpaceTooLarge,
    imnet_detect,
    mf_llr_detect,
    ml_search_size,
    mld_detect,
)
from .mapping import IMConfig
from .nn.network import Network
from .training import Dataset, TrainConfig, train_ad, train_sd


def check_config(cfg) -> IMConfig:
    if not isinstance(cfg, IMConfig):
        raise TypeError(f"cfg must be an IMConfig, got {type(cfg).__name__}")
    return cfg


def check_observations(Y, H, cfg: IMConfig):
    """Complex ``(B, N_r, N_f)`` observations and ``(B, N_f, N_r, N_t)`` channels.

    Single-frame inputs without a batch axis are promoted.
    """
    Y = np.asarray(Y, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if Y.ndim == 2:
        Y = Y[None]
    if H.ndim == 3:
        H = H[None]
    want_y = (cfg.n_rx, cfg.n_sub)
    want_h = (cfg.n_sub, cfg.n_rx, cfg.n_tx)
    if Y.ndim != 3 or Y.shape[1:] != want_y:
        raise ValueError(f"Y must have shape (B, {want_y[0]}, {want_y[1]}), got {Y.shape}")
    if H.ndim != 4 or H.shape[1:] != want_h:
        raise ValueError(f"H must have shape (B, {', '.join(map(str, want_h))}), got {H.shape}")
    if len(Y) != len(H):
        raise ValueError(f"Y has {len(Y)} frames but H has {len(H)}")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(H))):
        raise ValueError("Y and H must be finite")
    return Y, H


def check_snr(snr_db) -> float:
    snr = float(snr_db)
    if not np.isfinite(snr):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    return snr


def check_bits(bits, n_frames: int, cfg: IMConfig) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None]
    if bits.shape != (n_frames, cfg.total_bits):
        raise ValueError(f"bits must have shape ({n_frames}, {cfg.total_bits}), got {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0/1")
    return bits.astype(np.uint8)


def check_dataset(ds, cfg: IMConfig) -> Dataset:
    if not isinstance(ds, Dataset):
        raise TypeError(f"expected a Dataset, got {type(ds).__name__}")
    if ds.cfg != cfg:
        raise ValueError("dataset was generated for a different IMConfig")
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    return ds


class _Detector(BaseEstimator):
    def _detect(self, Y, H, es) -> DetectorOutput:  # pragma: no cover - abstract
        raise NotImplementedError

    def detect(self, Y, H, snr_db) -> DetectorOutput:
        """Full detector output (frames, soft values, metrics)."""
        check_is_fitted(self)
        Y, H = check_observations(Y, H, self.cfg)
        return self._detect(Y, H, snr_to_es(check_snr(snr_db)))

    def predict(self, Y, H, snr_db) -> np.ndarray:
        """Decided bits, ``(B, total_bits)``."""
        return self.detect(Y, H, snr_db).bits(self.cfg)

    def score(self, Y, H, snr_db, bits) -> float:
        """One minus the bit error rate."""
        decided = self.predict(Y, H, snr_db)
        return 1.0 - float(np.mean(decided != check_bits(bits, len(decided), self.cfg)))


class MLDetector(_Detector):
    """Exhaustive search over the legal codebook.

    Parameters
    ----------
    cfg : IMConfig
    cap : int
        Largest codebook size the detector accepts.
    """

    def __init__(self, cfg: IMConfig, cap: int = ML_SEARCH_CAP):
        self.cfg = cfg
        self.cap = cap

    def fit(self, dataset=None):
        check_config(self.cfg)
        size = ml_search_size(self.cfg)
        if size > self.cap:
            raise SearchSpaceTooLarge(size, self.cap)
        self.search_size_ = size
        return self

    def _detect(self, Y, H, es):
        return mld_detect(Y, H, self.cfg, es, cap=self.cap)


class MFLLRDetector(_Detector):
    """Matched-filter antenna choice followed by LLR subcarrier detection."""

    def __init__(self, cfg: IMConfig):
        self.cfg = cfg

    def fit(self, dataset=None):
        check_config(self.cfg)
        if self.cfg.f_active >= self.cfg.n_sub:
            raise ValueError("LLR subcarrier detection needs f_active < n_sub")
        self.n_candidates_ = len(self.cfg.antenna_table)
        return self

    def _detect(self, Y, H, es):
        return mf_llr_detect(Y, H, self.cfg, es)


class IMNetDetector(_Detector):
    """Learned antenna detector plus LS estimation and a residual denoiser.

    With ``use_denoiser=False`` the pipeline stops after the LS step, which
    is the DLBMP detector.

    Parameters
    ----------
    cfg : IMConfig
    tau : float
        Activation threshold on the antenna probabilities.
    epochs_ad, epochs_sd : int
        Training epochs of the two subnets.
    batch_size : int
    learning_rate : float
    ad_features, sd_features : str
        Input feature modes of the two subnets.
    use_denoiser : bool
    seed : int
    """

    def __init__(
        self,
        cfg: IMConfig,
        tau: float = TrainConfig.tau,
        epochs_ad: int = TrainConfig.epochs_ad,
        epochs_sd: int = TrainConfig.epochs_sd,
        batch_size: int = TrainConfig.batch_size,
        learning_rate: float = TrainConfig.learning_rate,
        ad_features: str = TrainConfig.ad_features,
        sd_features: str = TrainConfig.sd_features,
        use_denoiser: bool = True,
        seed: int = 0,
    ):
        self.cfg = cfg
        self.tau = tau
        self.epochs_ad = epochs_ad
        self.epochs_sd = epochs_sd
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.ad_features = ad_features
        self.sd_features = sd_features
        self.use_denoiser = use_denoiser
        self.seed = seed

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs_ad=self.epochs_ad,
            epochs_sd=self.epochs_sd,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            ad_features=self.ad_features,
            sd_features=self.sd_features,
            tau=self.tau,
            seed=self.seed,
        )

    def fit(self, dataset: Dataset, ad_net: Network | None = None):
        """Train the antenna detector, then (optionally) the denoiser.

        A pre-trained ``ad_net`` skips the first stage.
        """
        check_config(self.cfg)
        ds = check_dataset(dataset, self.cfg)
        train_cfg = self.train_config()
        if ad_net is None:
            res = train_ad(ds, train_cfg)
            ad_net, self.ad_losses_ = res.net, res.losses
        self.ad_net_ = ad_net
        self.sd_net_ = None
        if self.use_denoiser:
            res = train_sd(ds, ad_net, train_cfg)
            self.sd_net_, self.sd_losses_ = res.net, res.losses
        return self

    @classmethod
    def from_networks(cls, cfg: IMConfig, ad_net: Network, sd_net: Network | None = None, tau: float = 0.5):
        """Detector around already trained subnets."""
        est = IMNetDetector(cfg, tau=tau, use_denoiser=sd_net is not None,
                            ad_features=ad_net.meta.get("features", TrainConfig.ad_features))
        if sd_net is not None:
            est.sd_features = sd_net.meta.get("features", TrainConfig.sd_features)
        est.ad_net_, est.sd_net_ = ad_net, sd_net
        return est

    def _detect(self, Y, H, es):
        sd = self.sd_net_ if self.use_denoiser else None
        return imnet_detect(Y, H, self.ad_net_, sd, self.tau, self.cfg, es)


class DLBMPDetector(IMNetDetector):
    """The learned pipeline without its denoising stage."""

    def __init__(
        self,
        cfg: IMConfig,
        tau: float = TrainConfig.tau,
        epochs_ad: int = TrainConfig.epochs_ad,
        batch_size: int = TrainConfig.batch_size,
        learning_rate: float = TrainConfig.learning_rate,
        ad_features: str = TrainConfig.ad_features,
        seed: int = 0,
    ):
        super().__init__(cfg, tau, epochs_ad, 0, batch_size, learning_rate, ad_features,
                         use_denoiser=False, seed=seed)

    def get_params(self, deep=True):
        names = ("cfg", "tau", "epochs_ad", "batch_size", "learning_rate", "ad_features", "seed")
        return {k: getattr(self, k) for k in names}


def make_estimator(name: str, cfg: IMConfig, **kwargs) -> _Detector:
    if name == "ml":
        return MLDetector(cfg, **kwargs)
    if name == "mf-llr":
        return MFLLRDetector(cfg, **kwargs)
    if name == "dlbmp":
        return DLBMPDetector(cfg, **kwargs)
    if name == "imnet":
        return IMNetDetector(cfg, **kwargs)
    raise ValueError(f"unknown detector {name!r}")
