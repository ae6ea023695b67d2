"""
Application constants.

All magic numbers and strings should be defined here as named constants.
"""

# =============================================================================
# Exit Codes
# =============================================================================
class ExitCode:
    """Process exit codes reported by the CLI."""

    OK = 0
    VALIDATION = 1
    IO = 2
    USAGE = 64


# =============================================================================
# Dataset Topics and Categories
# =============================================================================
class Topic:
    """Pair photograph topics."""

    WEDDING = "wedding"
    COUPLES = "couples"
    FEMALE_FRIENDS = "female_friends"
    PARENT_CHILD = "parent_child"


TOPICS = (Topic.WEDDING, Topic.COUPLES, Topic.FEMALE_FRIENDS, Topic.PARENT_CHILD)


class Composition:
    """Shot composition classes."""

    FULL_BODY = "full_body"
    HALF_BODY = "half_body"
    CLOSE_UP = "close_up"


COMPOSITIONS = (Composition.FULL_BODY, Composition.HALF_BODY, Composition.CLOSE_UP)


class Split:
    """Split labels."""

    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


SPLITS = (Split.TRAIN, Split.TEST, Split.UNASSIGNED)

SCENE_TAGS = ("studio", "park", "beach", "street", "home", "festival", "christmas")
OTHER_SCENE = "other"
RARE_SCENE_MIN = 10


# =============================================================================
# People
# =============================================================================
class Gender:
    """Person gender attribute values."""

    MALE = "male"
    FEMALE = "female"


class AgeGroup:
    """Person age group attribute values."""

    ADULT = "adult"
    CHILD = "child"


# Caption word -> (gender, age group)
GENDER_WORDS = {
    "man": (Gender.MALE, AgeGroup.ADULT),
    "woman": (Gender.FEMALE, AgeGroup.ADULT),
    "boy": (Gender.MALE, AgeGroup.CHILD),
    "girl": (Gender.FEMALE, AgeGroup.CHILD),
}

# Generic pair descriptors rewritten into two explicit mentions before matching
GENERIC_DESCRIPTORS = (
    ("a bride and a groom", "a woman and a man"),
    ("a bride and groom", "a woman and a man"),
    ("a groom and a bride", "a man and a woman"),
    ("a couple", "a man and a woman"),
    ("two women", "a woman and a woman"),
    ("two girlfriends", "a woman and a woman"),
    ("a mother and a daughter", "a woman and a girl"),
    ("a mother and daughter", "a woman and a girl"),
    ("a father and a son", "a man and a boy"),
    ("a father and son", "a man and a boy"),
)

# Topic -> ordered pair of caption words available for it
TOPIC_GENDERS = {
    Topic.WEDDING: (("man", "woman"), ("woman", "man")),
    Topic.COUPLES: (("man", "woman"), ("woman", "man")),
    Topic.FEMALE_FRIENDS: (("woman", "woman"),),
    Topic.PARENT_CHILD: (("woman", "girl"), ("girl", "woman"), ("man", "boy"), ("boy", "man")),
}


# =============================================================================
# Caption Lexicons
# =============================================================================
CAPTION_TEMPLATE = "a {g1} and a {g2} {verb} in {scene}, wearing {color} {garment}"
CAPTION_SUBJECT_SLOTS = (1, 4)

VERB_LEXICON = (
    "posing",
    "smiling",
    "standing",
    "sitting",
    "walking",
    "hugging",
    "dancing",
    "holding",
    "laughing",
    "embracing",
)

ATTIRE_COLORS = {
    "white": (236, 236, 230),
    "black": (28, 28, 32),
    "red": (190, 40, 46),
    "blue": (46, 80, 170),
    "green": (52, 130, 70),
    "pink": (226, 150, 170),
    "gray": (128, 128, 132),
    "beige": (214, 196, 160),
}

GARMENTS = ("dress", "suit", "shirt", "sweater", "jacket", "gown")

SCENE_COLORS = {
    "studio": (200, 204, 210),
    "park": (120, 170, 110),
    "beach": (230, 214, 170),
    "street": (150, 150, 156),
    "home": (196, 170, 140),
    "festival": (210, 120, 80),
    "christmas": (60, 110, 80),
    OTHER_SCENE: (170, 170, 170),
}


# =============================================================================
# Keypoints
# =============================================================================
KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINT_NAMES)}
VISIBILITY_THRESHOLD = 0.5


# =============================================================================
# Filtering and Calibration Thresholds
# =============================================================================
MIN_IMAGE_DIM = 400
IOU_DUPLICATE = 0.8
IOU_REVIEW = 0.6
DETECTOR_QUORUM = 3


class RejectReason:
    """Reasons recorded by filter_records."""

    DUPLICATE = "duplicate"
    RESOLUTION = "resolution"
    PERSON_COUNT = "person_count"
    FORBIDDEN_TEXT = "forbidden_text"


class ReviewReason:
    """Review flags raised by calibration and matching."""

    DUPLICATE = "duplicate"
    QUORUM = "quorum"
    DETECTOR_DISAGREEMENT = "detector_disagreement"
    LLAVA_MISMATCH = "llava_mismatch"
    UNMATCHABLE = "unmatchable"


DETECTOR_IDS = ("yolov8", "yolov9", "yolov10", "rtdetr", "maskdino", "dino")


# =============================================================================
# Synthetic Rendering Geometry
# =============================================================================
CANVAS_SIZE = 64
SOURCE_SCALE = 16
GLYPH_SIZE = 16
REFERENCE_SIZE = 32

# Face tile column per subject slot and tile row per composition (canvas pixels)
SLOT_TILE_X = (8, 40)
COMPOSITION_TILE_Y = {
    Composition.FULL_BODY: 8,
    Composition.HALF_BODY: 16,
    Composition.CLOSE_UP: 24,
}
GLYPH_FRAME_COLOR = (0, 0, 0)


# =============================================================================
# Sampling
# =============================================================================
class ReverseUpdate:
    """Reverse-step rules of the sampler."""

    DDIM = "ddim"
    MEAN = "mean"


REVERSE_UPDATES = (ReverseUpdate.DDIM, ReverseUpdate.MEAN)


# =============================================================================
# Evaluation
# =============================================================================
NCC_THRESHOLD = 0.6
NMS_IOU = 0.3
MAX_FACES = 2
CI_Z = 1.96


# =============================================================================
# Artifact Names
# =============================================================================
RESOLVED_CONFIG_FILE = "resolved_config.json"
RECORDS_FILE = "records.jsonl"
CHECKPOINT_FILE = "checkpoint.safetensors"
LOSS_CURVE_FILE = "loss_curve.txt"
BASE_LOSS_CURVE_FILE = "base_loss_curve.txt"
CHECKPOINT_FORMAT = "duetdiff-checkpoint-v1"
