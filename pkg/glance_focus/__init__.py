"""
Event-memory question answering over synthetic multi-event feature sequences.
"""

from glance_focus.model import GlanceFocusModel, ModelOutput
from glance_focus.models import AttentionConfig, GeneratorConfig, TrainConfig

__all__ = ["AttentionConfig", "GeneratorConfig", "GlanceFocusModel", "ModelOutput", "TrainConfig"]
