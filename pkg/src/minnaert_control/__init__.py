"""Wave-field tracking control through resonant (Minnaert) bubble clusters.

Layers, bottom up: Dirichlet spectra of a box (:mod:`.spectral`), ideal
point-source control of finitely many modes (:mod:`.ideal`), the delayed
bubble amplitude system (:mod:`.bubbles`), its Laplace-domain transfer
matrices and poles (:mod:`.transfer`), band-limited control synthesis
(:mod:`.realization`) and the experiment harness / CLI (:mod:`.harness`).
"""

from .signals import Signal, read_csv, write_csv
from .spectral import BoxDomain, ModeSet, SpectralBand, eigenmode, eval_modes, modes_in_band
from .ideal import coupling_matrix, ideal_source, integrate_modal, right_inverse, tracking_error
from .bubbles import (
    BubbleEnsemble,
    TransducerArray,
    build_ensemble,
    build_system,
    integrate_delayed,
    incident_traces,
)
from .transfer import (
    SMatrixEvaluator,
    count_poles_in_disk,
    find_pole,
    interaction_matrix,
    principal_pole,
    tune_cluster,
)
from .realization import (
    BandFilter,
    bandpass,
    control_cost,
    project_to_band_space,
    realization_error,
    reference_trajectory_gen,
    synthesize_controls,
)

__version__ = "0.1.0"
