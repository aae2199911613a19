//! Deterministic local stand-ins for the refiner and the editor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Action, EditPlan, EditRequest, EditResponse, ImageEditor, Instruction, LabelInfo,
    PromptRefiner, Qualifier, Target,
};
use crate::error::{Error, Result};
use crate::imaging::{hsv_to_rgb, rgb_to_hsv, Image};

const COLORS: [(&str, f64); 10] = [
    ("red", 0.0),
    ("orange", 30.0),
    ("yellow", 60.0),
    ("blonde", 45.0),
    ("green", 120.0),
    ("cyan", 180.0),
    ("blue", 240.0),
    ("purple", 270.0),
    ("magenta", 300.0),
    ("pink", 330.0),
];

/// Hue in degrees of a named color.
pub fn color_hue(name: &str) -> Option<f64> {
    COLORS.iter().find(|(n, _)| *n == name).map(|(_, h)| *h)
}

const REMOVE_WORDS: [&str; 5] = ["remove", "delete", "erase", "without", "bald"];
const ACCESSORY_WORDS: [&str; 8] = [
    "wear", "wears", "wearing", "add", "put", "earring", "hat", "glasses",
];
const ACCESSORY_NOUNS: [&str; 5] = ["earring", "hat", "glasses", "scar", "tattoo"];
const RESTYLE_WORDS: [&str; 8] = [
    "older", "younger", "old", "young", "cartoon", "style", "restyle", "pale",
];
const PERSON_WORDS: [&str; 8] = ["man", "woman", "person", "he", "she", "him", "her", "skin"];

/// Keyword and position parser. Clauses are split on punctuation and "and";
/// each yields one instruction.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRefiner;

fn words(clause: &str) -> Vec<String> {
    clause
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|w| w.trim_end_matches("'s").trim_matches('\'').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn singular(w: &str) -> &str {
    w.strip_suffix('s').filter(|s| s.len() > 2).unwrap_or(w)
}

fn find_target(ws: &[String], labels: &[LabelInfo]) -> Option<Target> {
    if ws.iter().any(|w| singular(w) == "ear") {
        return Some(Target::Region("ear".into()));
    }
    let by_name = |name: &str| {
        labels
            .iter()
            .find(|l| l.name == name)
            .map(|l| Target::Label(l.id))
    };
    if let Some(t) = ws
        .iter()
        .find_map(|w| by_name(w).or_else(|| by_name(singular(w))))
    {
        return Some(t);
    }
    if ws.iter().any(|w| w == "throat") {
        return by_name("neck");
    }
    if ws
        .iter()
        .any(|w| PERSON_WORDS.contains(&w.as_str()) || w == "face")
    {
        return by_name("face");
    }
    None
}

fn parse_clause(clause: &str, labels: &[LabelInfo]) -> Result<Option<Instruction>> {
    let ws = words(clause);
    if ws.is_empty() {
        return Ok(None);
    }
    let has = |set: &[&str]| ws.iter().any(|w| set.contains(&w.as_str()));
    let color = ws.iter().find(|w| color_hue(w).is_some()).cloned();
    let shift = ws
        .iter()
        .position(|w| w == "shift")
        .and_then(|i| ws[i..].iter().find_map(|w| w.parse::<f64>().ok()));
    let (action, style) = if has(&REMOVE_WORDS) {
        (Action::Remove, String::new())
    } else if has(&ACCESSORY_WORDS) {
        let noun = ws
            .iter()
            .find(|w| ACCESSORY_NOUNS.contains(&singular(w)))
            .cloned()
            .unwrap_or_else(|| ws.last().cloned().unwrap_or_default());
        (Action::AddAccessory, noun)
    } else if let Some(deg) = shift {
        (Action::Recolor, format!("shift {deg}"))
    } else if let Some(c) = color {
        (Action::Recolor, c)
    } else if has(&RESTYLE_WORDS) {
        let desc = ws
            .iter()
            .filter(|w| RESTYLE_WORDS.contains(&w.as_str()))
            .cloned()
            .collect::<Vec<_>>();
        (Action::Restyle, desc.join(" "))
    } else {
        return Ok(None);
    };
    let target = find_target(&ws, labels).ok_or_else(|| {
        Error::Refusal(format!(
            "could not identify what to edit in {:?}",
            clause.trim()
        ))
    })?;
    let qualifier = if ws.iter().any(|w| w == "left") {
        Some(Qualifier::Left)
    } else if ws.iter().any(|w| w == "right") {
        Some(Qualifier::Right)
    } else {
        None
    };
    Ok(Some(Instruction {
        action,
        target,
        qualifier,
        style,
    }))
}

impl PromptRefiner for MockRefiner {
    fn refine(&self, prompt: &str, labels: &[LabelInfo]) -> Result<EditPlan> {
        let lower = prompt
            .to_lowercase()
            .replace(" and ", ";")
            .replace(" then ", ";");
        let mut instructions = Vec::new();
        for clause in lower.split([',', ';', '.', '!']) {
            if let Some(ins) = parse_clause(clause, labels)? {
                instructions.push(ins);
            }
        }
        if instructions.is_empty() {
            return Err(Error::Refusal(format!("no actionable edit in {prompt:?}")));
        }
        Ok(EditPlan { instructions })
    }
}

/// In-mask image transforms keyed by the instruction's action. Pixels
/// outside the mask are returned untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEditor;

fn parse_instruction(text: &str) -> Result<(Action, String)> {
    let (head, style) = text.split_once(':').unwrap_or((text, ""));
    let action = head
        .split_whitespace()
        .next()
        .and_then(Action::parse)
        .ok_or_else(|| Error::InvalidParameter(format!("mock editor cannot parse {text:?}")))?;
    Ok((action, style.trim().to_string()))
}

impl ImageEditor for MockEditor {
    fn edit(&self, req: &EditRequest) -> Result<EditResponse> {
        if req.mask.width != req.image.width || req.mask.height != req.image.height {
            return Err(Error::DimensionMismatch(
                "mask and image differ in size".into(),
            ));
        }
        let (action, style) = parse_instruction(&req.instruction)?;
        let mut out = req.image.clone();
        let inside = |i: usize| req.mask.bits[i];
        match action {
            Action::Recolor => {
                let set = color_hue(&style);
                let shift = style
                    .strip_prefix("shift")
                    .and_then(|s| s.trim().parse::<f64>().ok());
                if set.is_none() && shift.is_none() {
                    return Err(Error::InvalidParameter(format!("unknown color {style:?}")));
                }
                for px in masked(&mut out, &req.mask.bits) {
                    let (h, s, v) = rgb_to_hsv(*px);
                    *px = match set {
                        Some(target) => hsv_to_rgb(target, s.max(0.5), v),
                        None => hsv_to_rgb(h + shift.unwrap_or(0.0), s, v),
                    };
                }
            }
            Action::Restyle => {
                for px in masked(&mut out, &req.mask.bits) {
                    *px = px.map(|c| (0.5 + 1.5 * (c - 0.5)).clamp(0.0, 1.0));
                }
            }
            Action::AddAccessory => {
                if let Some((cx, cy)) = req.mask.centroid() {
                    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                    let tint: f64 = rng.random_range(-0.05..0.05);
                    let gold = [0.85 + tint, 0.7 + tint, 0.2];
                    let radius =
                        (0.5 * (req.mask.count() as f64 / std::f64::consts::PI).sqrt()).max(1.5);
                    for i in (0..out.data.len()).filter(|&i| inside(i)) {
                        let (x, y) = ((i % out.width) as f64, (i / out.width) as f64);
                        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                        if (d - radius).abs() <= 0.75 {
                            out.data[i] = gold;
                        }
                    }
                }
            }
            Action::Remove => {
                let fill = border_mean(&req.image, &req.mask.bits);
                for i in (0..out.data.len()).filter(|&i| inside(i)) {
                    out.data[i] = fill;
                }
            }
        }
        Ok(EditResponse {
            image: out,
            status: "ok".into(),
        })
    }
}

fn masked<'a>(img: &'a mut Image, bits: &'a [bool]) -> impl Iterator<Item = &'a mut [f64; 3]> + 'a {
    img.data
        .iter_mut()
        .zip(bits)
        .filter(|(_, m)| **m)
        .map(|(p, _)| p)
}

/// Mean color of unmasked pixels 4-adjacent to the mask, or black.
fn border_mean(img: &Image, bits: &[bool]) -> [f64; 3] {
    let (w, h) = (img.width, img.height);
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] {
                continue;
            }
            let touches = (x > 0 && bits[y * w + x - 1])
                || (x + 1 < w && bits[y * w + x + 1])
                || (y > 0 && bits[(y - 1) * w + x])
                || (y + 1 < h && bits[(y + 1) * w + x]);
            if touches {
                let p = img.get(x, y);
                (0..3).for_each(|c| sum[c] += p[c]);
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        [0.0; 3]
    } else {
        sum.map(|s| s / n)
    }
}
