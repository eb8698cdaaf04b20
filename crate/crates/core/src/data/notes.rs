//! Discharge-summary section filtering.
//!
//! A section header is a line whose text up to the first colon looks like a
//! title (starts with a letter, at most 50 characters of letters, digits,
//! spaces and `/&()'.,-`). A section runs from its header line to the next
//! header line or the end of the note.

/// Administrative sections that carry no clinical content.
pub const DEFAULT_BLOCKED_SECTIONS: &[&str] = &[
    "Admission Date",
    "Discharge Date",
    "Date of Birth",
    "Service",
    "Attending",
];

const MAX_HEADER_LEN: usize = 50;

fn normalize(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn header_name(line: &str) -> Option<&str> {
    let colon = line.find(':')?;
    let name = line[..colon].trim();
    let mut chars = name.chars();
    let first = chars.next()?;
    if !first.is_alphabetic() || name.len() > MAX_HEADER_LEN {
        return None;
    }
    chars
        .all(|c| c.is_alphanumeric() || c == ' ' || "/&()'.,-".contains(c))
        .then_some(name)
}

/// Removes every section whose header matches one of `blocked_sections`
/// (case-insensitive, whitespace-normalized). Everything else is kept
/// verbatim, including line endings.
pub fn filter_note_sections<S: AsRef<str>>(note: &str, blocked_sections: &[S]) -> String {
    let blocked: Vec<String> = blocked_sections.iter().map(|s| normalize(s.as_ref())).collect();
    let mut out = String::with_capacity(note.len());
    let mut skipping = false;
    for line in note.split_inclusive('\n') {
        if let Some(name) = header_name(line) {
            skipping = blocked.contains(&normalize(name));
        }
        if !skipping {
            out.push_str(line);
        }
    }
    out
}
