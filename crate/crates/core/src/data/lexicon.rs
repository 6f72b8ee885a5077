//! Word tables used by the synthetic corpus generator and by the explanation
//! templates.

pub const FUNCTION_WORDS: [&str; 32] = [
    "the", "a", "of", "and", "to", "in", "is", "that", "it", "was", "for", "on", "with", "as", "but", "at", "by",
    "this", "from", "or", "so", "very", "just", "really", "also", "then", "there", "which", "not", "we", "you", "i",
];

pub const GENERAL_WORDS: [&str; 48] = [
    "time", "day", "people", "good", "great", "make", "think", "know", "thing", "way", "little", "work", "new",
    "better", "first", "last", "need", "feel", "look", "right", "small", "big", "place", "part", "find", "give", "try",
    "keep", "start", "nice", "bad", "old", "high", "kind", "hard", "easy", "best", "next", "home", "week", "year",
    "lot", "idea", "point", "fact", "story", "friend", "money",
];

/// Topic name followed by its keywords (the name is also the first keyword).
pub const TOPICS: [(&str, [&str; 16]); 8] = [
    (
        "cooking",
        [
            "cooking", "recipe", "oven", "flavor", "chicken", "sauce", "bake", "spice", "dinner", "butter", "garlic",
            "dough", "kitchen", "salad", "soup", "pan",
        ],
    ),
    (
        "travel",
        [
            "travel", "hotel", "flight", "beach", "city", "trip", "museum", "train", "luggage", "passport", "island",
            "tour", "map", "airport", "village", "ticket",
        ],
    ),
    (
        "music",
        [
            "music", "album", "guitar", "song", "concert", "band", "melody", "drums", "lyrics", "chorus", "piano",
            "singer", "tempo", "vinyl", "stage", "rhythm",
        ],
    ),
    (
        "sports",
        [
            "sports", "team", "match", "goal", "coach", "season", "league", "player", "score", "stadium", "referee",
            "tackle", "sprint", "trophy", "defense", "fans",
        ],
    ),
    (
        "technology",
        [
            "technology",
            "software",
            "laptop",
            "battery",
            "screen",
            "update",
            "server",
            "network",
            "chip",
            "app",
            "keyboard",
            "code",
            "cloud",
            "device",
            "sensor",
            "signal",
        ],
    ),
    (
        "finance",
        [
            "finance", "market", "stock", "budget", "loan", "interest", "savings", "tax", "invest", "bank", "price",
            "credit", "fund", "profit", "debt", "income",
        ],
    ),
    (
        "gardening",
        [
            "gardening",
            "soil",
            "seed",
            "bloom",
            "garden",
            "tomato",
            "compost",
            "weed",
            "shovel",
            "roses",
            "harvest",
            "mulch",
            "sprout",
            "hedge",
            "bulbs",
            "pots",
        ],
    ),
    (
        "film",
        [
            "film", "movie", "actor", "scene", "director", "plot", "camera", "script", "cinema", "sequel", "trailer",
            "villain", "studio", "drama", "cast", "premiere",
        ],
    ),
];

pub const KEYWORDS_PER_TOPIC: usize = 16;

pub const SENTENCE_END: [&str; 2] = [".", "!"];
pub const COMMA: &str = ",";

/// Names of the ground-truth style factors, in `style_factors` order.
pub const FACTOR_NAMES: [&str; 4] = ["sentence length", "comma use", "exclamation marks", "function words"];

/// Number of levels of each style factor.
pub const FACTOR_LEVELS: [u32; 4] = [3, 3, 2, 4];

pub const SENTENCE_LENGTH_LEVELS: [&str; 3] = ["short", "medium", "long"];
pub const COMMA_LEVELS: [&str; 3] = ["light", "moderate", "heavy"];
pub const EXCLAMATION_LEVELS: [&str; 2] = ["rare", "frequent"];
pub const FUNCTION_WORD_PROFILES: [&str; 4] = ["plain", "formal", "casual", "hedging"];

/// Mean words per sentence for each sentence-length level.
pub const SENTENCE_MEAN_WORDS: [f64; 3] = [5.0, 9.0, 15.0];
pub const COMMA_RATE: [f64; 3] = [0.02, 0.08, 0.2];
pub const EXCLAMATION_RATE: [f64; 2] = [0.05, 0.6];

/// Words used by explanation targets beyond the tables above.
pub const EXPLANATION_WORDS: [&str; 27] = [
    "Both",
    "texts",
    "share",
    "sentence",
    "length",
    "use",
    "marks",
    "function",
    "words",
    "and",
    "but",
    "their",
    "habits",
    "differ",
    "They",
    "vs",
    "same",
    "different",
    "author",
    "content",
    "discuss",
    "discusses",
    "themes",
    "Text",
    "1",
    "2",
    "while",
];

/// JSON field names of decision records (including the original misspelling).
pub const DECISION_WORDS: [&str; 3] = ["determination", "explaination", "explanation"];

/// Topic keyword `k` of topic `t`, synthesizing names past the built-in tables.
pub fn topic_keyword(t: usize, k: usize) -> alloc::string::String {
    if t < TOPICS.len() {
        alloc::string::String::from(TOPICS[t].1[k])
    } else {
        alloc::format!("t{t}k{k}")
    }
}

pub fn topic_name(t: usize) -> alloc::string::String {
    topic_keyword(t, 0)
}
