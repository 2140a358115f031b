//! Rendering the LLM attribute-elicitation prompts and parsing bullet-list answers.

use crate::error::{Error, Result};

/// Few-shot demonstration prepended to every instance prompt.
pub const DEMONSTRATION: &str = "Q: What are useful visual features to distinguish a lemur in a photo?
A: There are several useful visual features to tell there is a lemur in a photo:
- four-limbed primate
- black, grey, white, brown, or red-brown
- wet and hairless nose with curved nostrils
- long tail
- large eyes
- furry bodies
- clawed hands and feet
";

/// Attributes listed in [`DEMONSTRATION`].
pub const DEMONSTRATION_ATTRIBUTES: [&str; 7] = [
    "four-limbed primate",
    "black, grey, white, brown, or red-brown",
    "wet and hairless nose with curved nostrils",
    "long tail",
    "large eyes",
    "furry bodies",
    "clawed hands and feet",
];

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::EmptyName);
    }
    Ok(())
}

/// Per-class prompt. With a domain, the question asks to separate the class
/// from the rest of that domain.
pub fn render_instance(class_name: &str, domain: Option<&str>) -> Result<String> {
    check_name(class_name)?;
    let target = match domain {
        Some(d) => {
            check_name(d)?;
            format!("{class_name} from other {d}")
        }
        None => class_name.to_string(),
    };
    Ok(format!(
        "{DEMONSTRATION}Q: What are useful visual features to distinguish {target} in a photo?\n\
         A: There are several useful visual features to distinguish {target} in a photo:\n"
    ))
}

fn check_group(group: &str, classes: &[String]) -> Result<()> {
    check_name(group)?;
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    classes.iter().try_for_each(|c| check_name(c))
}

/// One prompt covering a group of related classes.
pub fn render_batch(group: &str, classes: &[String]) -> Result<String> {
    check_group(group, classes)?;
    Ok(format!(
        "Q: Here are {} kinds of {group}: {{{}}}. What are the useful visual features to distinguish them in a photo?\n",
        classes.len(),
        classes.join(", ")
    ))
}

/// The superclass wording, with the class count written out in words.
pub fn render_superclass(superclass: &str, classes: &[String]) -> Result<String> {
    check_group(superclass, classes)?;
    Ok(format!(
        "Q: Here are {} {superclass}: {{{}}}. What are the useful visual features for distinguishing them in a photo? Please list every attribute in bullet points.\n",
        count_in_words(classes.len()),
        classes.join(", ")
    ))
}

/// English words for small counts; larger counts fall back to digits.
pub fn count_in_words(n: usize) -> String {
    const SMALL: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
        "twenty",
    ];
    SMALL.get(n).map_or_else(|| n.to_string(), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAttributes {
    pub attributes: Vec<String>,
    /// Set when the response contained no usable bullet.
    pub empty_warning: bool,
}

/// Bullet lines (leading `-` after trimming) with the bullet stripped.
/// Empty items are dropped and exact repeats keep their first occurrence.
pub fn parse_attributes(response: &str) -> ParsedAttributes {
    let mut attributes: Vec<String> = Vec::new();
    for line in response.lines() {
        let Some(rest) = line.trim().strip_prefix('-') else {
            continue;
        };
        let item = rest.trim();
        if item.is_empty() || attributes.iter().any(|a| a == item) {
            continue;
        }
        attributes.push(item.to_string());
    }
    let empty_warning = attributes.is_empty();
    if empty_warning {
        log::warn!("response contained no bullet attributes");
    }
    ParsedAttributes {
        attributes,
        empty_warning,
    }
}

/// Newline-delimited attribute list, one per line.
pub fn format_attribute_list(attributes: &[String]) -> String {
    let mut out = String::new();
    for a in attributes {
        out.push_str(a);
        out.push('\n');
    }
    out
}

/// Reads a newline-delimited list; blank lines are skipped.
pub fn parse_attribute_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}
