//! JSON Schemas (draft 2020-12) for every response body, keyed by name.

macro_rules! schemas {
    ($($name:literal),* $(,)?) => {
        /// `(name, schema source)` pairs.
        pub const ALL: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../schemas/", $name, ".schema.json")))),*
        ];
    };
}

schemas!(
    "activities",
    "correlations",
    "error",
    "frames",
    "health",
    "performance",
    "session_created",
    "session_list",
    "session_summary",
    "signal",
    "summaries",
);

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
