"""The complete MRI + PET fusion network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccfe import FF, LPR, N_PROTOTYPES, consistency_loss, ff_fuse, lpr_enhance, mse_alignment_loss
from .encoders import FEATURE_DIM, PFE_CHANNELS, Encoder, fe_forward, shared_forward_stage1
from .modules import Module
from .ssff import Classifier, classify, joint_fuse
from .tensor import Tensor, add, no_grad, scale


@dataclass
class FusionOutput:
    logits: Tensor
    probs: Tensor
    l_consi: Tensor
    l_mse: Tensor
    f_sh: Tensor
    f1: Tensor | None = None
    f_m_prime: Tensor | None = None
    f_p_prime: Tensor | None = None


class FusionNet(Module):
    """All learnable state: specific extractors, shared extractor, CCFE, classifier.

    Dataflow for one batch::

        F_m, F_p   = PFE_sh(MRI), PFE_sh(PET)
        F1         = FF(F_m + F_p)
        F'_m, F'_p = LPR enhancement against R_p, R_m
        F_sh       = mean of pooled TCA_sh(AFE_sh(F'_m)), TCA_sh(AFE_sh(F'_p))
        logits     = linear([F_sh, SF_m, SF_p])

    The flags switch off the attention head (``use_tca``), the enhancement
    block and its losses (``use_ccfe``) or the specific branch (``use_ssff``).
    """

    def __init__(
        self,
        use_tca: bool = True,
        use_ccfe: bool = True,
        use_ssff: bool = True,
        n_prototypes: int = N_PROTOTYPES,
        block_norm: str = "batch",
        seed: int = 0,
        dtype=np.float32,
    ):
        rng = np.random.default_rng(seed)
        self.use_tca, self.use_ccfe, self.use_ssff = use_tca, use_ccfe, use_ssff
        self.shared = Encoder(use_tca, block_norm, rng, dtype)
        if use_ssff:
            self.fe_m = Encoder(use_tca, block_norm, rng, dtype)
            self.fe_p = Encoder(use_tca, block_norm, rng, dtype)
            self.head_m = Classifier(FEATURE_DIM, rng=rng, dtype=dtype)
            self.head_p = Classifier(FEATURE_DIM, rng=rng, dtype=dtype)
        else:
            self.fe_m = self.fe_p = self.head_m = self.head_p = None
        if use_ccfe:
            self.ff = FF(PFE_CHANNELS, rng, dtype)
            self.lpr_m = LPR(PFE_CHANNELS, n_prototypes, rng, dtype)
            self.lpr_p = LPR(PFE_CHANNELS, n_prototypes, rng, dtype)
        else:
            self.ff = self.lpr_m = self.lpr_p = None
        width = 3 * FEATURE_DIM if use_ssff else FEATURE_DIM
        self.classifier = Classifier(width, rng=rng, dtype=dtype)

    @property
    def dtype(self):
        return self.classifier.w.dtype

    def fusion_parameters(self) -> list[Tensor]:
        """Parameters trained by the joint objective (everything but the specific branch)."""
        specific = {id(p) for m in (self.fe_m, self.fe_p, self.head_m, self.head_p) if m is not None for p in m.parameters()}
        return [p for p in self.parameters() if id(p) not in specific]

    def specific_features(self, mri: Tensor, pet: Tensor, frozen: bool = True) -> tuple[Tensor, Tensor]:
        if not self.use_ssff:
            raise RuntimeError("model was built without the specific branch")
        if frozen:
            modes = (self.fe_m.training, self.fe_p.training)
            self.fe_m.eval()
            self.fe_p.eval()
            with no_grad():
                sf = fe_forward(mri, self.fe_m), fe_forward(pet, self.fe_p)
            self.fe_m.train(modes[0])
            self.fe_p.train(modes[1])
            return sf
        return fe_forward(mri, self.fe_m), fe_forward(pet, self.fe_p)

    def forward(
        self,
        mri: Tensor,
        pet: Tensor,
        sf_m: Tensor | None = None,
        sf_p: Tensor | None = None,
        frozen_specific: bool = True,
        mse_paper_exact: bool = False,
    ) -> FusionOutput:
        if mri.shape != pet.shape:
            raise ValueError(f"MRI {mri.shape} and PET {pet.shape} must be co-registered")
        f_m = shared_forward_stage1(mri, self.shared)
        f_p = shared_forward_stage1(pet, self.shared)
        zero = Tensor(np.zeros((), dtype=f_m.dtype))
        f1 = None
        if self.use_ccfe:
            f1 = ff_fuse(f_m, f_p, self.ff)
            f_m = lpr_enhance(f_m, self.lpr_p, self.lpr_m.Wq)
            f_p = lpr_enhance(f_p, self.lpr_m, self.lpr_p.Wq)
            l_consi = consistency_loss(self.lpr_m, self.lpr_p, f1)
            l_mse = mse_alignment_loss(f_m, f_p, paper_exact=mse_paper_exact)
        else:
            l_consi = l_mse = zero
        f_sh = scale(add(self.shared.head(f_m), self.shared.head(f_p)), 0.5)
        if self.use_ssff:
            if sf_m is None or sf_p is None:
                sf_m, sf_p = self.specific_features(mri, pet, frozen=frozen_specific)
            joint = joint_fuse(f_sh, sf_m, sf_p)
        else:
            joint = f_sh
        logits, probs = classify(joint, self.classifier)
        return FusionOutput(logits, probs, l_consi, l_mse, f_sh, f1, f_m, f_p)
