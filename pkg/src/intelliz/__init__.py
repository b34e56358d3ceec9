"""Zero-shot TTS mechanisms at desk scale: voicing-masked attention pooling,
prototype distillation and cycle-consistency training."""
# importing the submodules registers their ops with the gradient checker
from . import attention, corpus, data, dsp, encoder, grad, objectives, trainer, tts  # noqa: F401

__version__ = "0.1.0"
