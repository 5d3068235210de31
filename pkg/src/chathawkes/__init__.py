"""Multivariate Hawkes model of emotions in live chats driven by video subtitles."""

from .events import EmotionSet, SessionCollection, VideoSession
from .kernels import ShapeConfig
from .params import EmotionParams, HawkesParams

__all__ = [
    "EmotionSet",
    "EmotionParams",
    "HawkesParams",
    "SessionCollection",
    "ShapeConfig",
    "VideoSession",
]
