"""Human-like vocal imitations of sound textures, and retrieval from imitations."""

from .features import FeatureRegistry, FeatureVector, default_registry, extract
from .inference import RSA, Distribution, InferenceConfig, SimilarityMatrix, softmax
from .ontology import Ontology, OntologyPath, delta, load_ontology
from .utterance_space import UtteranceSpace, build_space, standard_patterns
from .vocal_tract import ControlTrajectory, VoiceProfile, get_voice, synthesize

__version__ = "0.1.0"

__all__ = [
    "ControlTrajectory", "Distribution", "FeatureRegistry", "FeatureVector", "InferenceConfig",
    "Ontology", "OntologyPath", "RSA", "SimilarityMatrix", "UtteranceSpace", "VoiceProfile",
    "build_space", "default_registry", "delta", "extract", "get_voice", "load_ontology",
    "softmax", "standard_patterns", "synthesize",
]
