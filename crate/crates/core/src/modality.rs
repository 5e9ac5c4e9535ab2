//! Query-side and candidate-side modality configurations and the assembly of
//! what each side hands to the encoders.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Article, QueryCase};

/// Whitespace tokens per candidate text chunk.
pub const CHUNK_TOKENS: usize = 512;
/// Maximum text chunks drawn from one article.
pub const MAX_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModalityError {
    #[error("missing caption for {0:?}")]
    MissingCaption(String),
    #[error("invalid modality configuration: {0}")]
    InvalidConfig(String),
}

/// What represents the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuerySide {
    /// I: the query image.
    Image,
    /// IQ: image plus the user question.
    ImageQuestion,
    /// IC: image plus a generated caption.
    ImageCaption,
    /// C: generated caption alone.
    Caption,
}

/// What represents a knowledge-base candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateSide {
    /// I: article image.
    Image,
    /// IT: article image plus article text.
    ImageText,
    /// IC: article image plus its caption.
    ImageCaption,
    /// C: caption alone.
    Caption,
}

impl QuerySide {
    pub fn code(self) -> &'static str {
        match self {
            Self::Image => "I",
            Self::ImageQuestion => "IQ",
            Self::ImageCaption => "IC",
            Self::Caption => "C",
        }
    }

    pub fn needs_caption(self) -> bool {
        matches!(self, Self::ImageCaption | Self::Caption)
    }
}

impl CandidateSide {
    pub fn code(self) -> &'static str {
        match self {
            Self::Image => "I",
            Self::ImageText => "IT",
            Self::ImageCaption => "IC",
            Self::Caption => "C",
        }
    }

    pub fn needs_caption(self) -> bool {
        matches!(self, Self::ImageCaption | Self::Caption)
    }
}

impl FromStr for QuerySide {
    type Err = ModalityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" => Ok(Self::Image),
            "IQ" => Ok(Self::ImageQuestion),
            "IC" => Ok(Self::ImageCaption),
            "C" => Ok(Self::Caption),
            other => Err(ModalityError::InvalidConfig(format!("unknown query side {other:?}"))),
        }
    }
}

impl FromStr for CandidateSide {
    type Err = ModalityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" => Ok(Self::Image),
            "IT" => Ok(Self::ImageText),
            "IC" => Ok(Self::ImageCaption),
            "C" => Ok(Self::Caption),
            other => Err(ModalityError::InvalidConfig(format!(
                "unknown candidate side {other:?}"
            ))),
        }
    }
}

/// A `query:candidate` pairing such as `IQ:IT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalityConfig {
    pub query: QuerySide,
    pub candidate: CandidateSide,
}

impl ModalityConfig {
    pub const fn new(query: QuerySide, candidate: CandidateSide) -> Self {
        Self { query, candidate }
    }
}

impl Default for ModalityConfig {
    fn default() -> Self {
        Self::new(QuerySide::ImageQuestion, CandidateSide::ImageText)
    }
}

impl fmt::Display for ModalityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.query.code(), self.candidate.code())
    }
}

impl FromStr for ModalityConfig {
    type Err = ModalityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (q, c) = s
            .split_once(':')
            .ok_or_else(|| ModalityError::InvalidConfig(format!("expected QUERY:CANDIDATE, got {s:?}")))?;
        Ok(Self::new(q.trim().parse()?, c.trim().parse()?))
    }
}

impl Serialize for ModalityConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalityConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Payloads to send to the visual and textual encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedPlan {
    pub image_ref: Option<String>,
    pub text: Option<String>,
}

pub fn assemble_query(
    q: &QueryCase,
    side: QuerySide,
    caption: Option<&str>,
) -> Result<EmbedPlan, ModalityError> {
    let caption = || {
        caption
            .filter(|c| !c.is_empty())
            .map(String::from)
            .ok_or_else(|| ModalityError::MissingCaption(q.image_ref.clone()))
    };
    let image = || {
        if q.image_ref.is_empty() {
            Err(ModalityError::InvalidConfig(format!("query {} has no image", q.id)))
        } else {
            Ok(q.image_ref.clone())
        }
    };
    Ok(match side {
        QuerySide::Image => EmbedPlan {
            image_ref: Some(image()?),
            text: None,
        },
        QuerySide::ImageQuestion => {
            if q.question.trim().is_empty() {
                return Err(ModalityError::InvalidConfig(format!("query {} has no question", q.id)));
            }
            EmbedPlan {
                image_ref: Some(image()?),
                text: Some(q.question.clone()),
            }
        }
        QuerySide::ImageCaption => EmbedPlan {
            image_ref: Some(image()?),
            text: Some(caption()?),
        },
        QuerySide::Caption => EmbedPlan {
            image_ref: None,
            text: Some(caption()?),
        },
    })
}

/// One retrievable piece of an article.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateUnit {
    pub unit_id: String,
    pub article_id: String,
    pub image_ref: Option<String>,
    pub text: Option<String>,
}

/// Consecutive `CHUNK_TOKENS`-token chunks of the article body, at most
/// `MAX_CHUNKS`.
pub fn chunk_text(article: &Article) -> Vec<String> {
    let body = article.body();
    let tokens: Vec<&str> = body.split_whitespace().collect();
    tokens
        .chunks(CHUNK_TOKENS)
        .take(MAX_CHUNKS)
        .map(|c| c.join(" "))
        .collect()
}

/// Split an article into candidate units. Image-based configurations yield
/// no units for an article without images.
pub fn assemble_candidates(
    article: &Article,
    side: CandidateSide,
    captions: &BTreeMap<String, String>,
) -> Result<Vec<CandidateUnit>, ModalityError> {
    let caption = |img: &String| {
        captions
            .get(img)
            .filter(|c| !c.is_empty())
            .cloned()
            .ok_or_else(|| ModalityError::MissingCaption(img.clone()))
    };
    let aid = &article.id;
    let mut units = Vec::new();
    for (i, img) in article.image_refs.iter().enumerate() {
        match side {
            CandidateSide::Image => units.push(CandidateUnit {
                unit_id: format!("{aid}#i{i}"),
                article_id: aid.clone(),
                image_ref: Some(img.clone()),
                text: None,
            }),
            CandidateSide::ImageText => {
                for (c, chunk) in chunk_text(article).into_iter().enumerate() {
                    units.push(CandidateUnit {
                        unit_id: format!("{aid}#i{i}t{c}"),
                        article_id: aid.clone(),
                        image_ref: Some(img.clone()),
                        text: Some(chunk),
                    });
                }
            }
            CandidateSide::ImageCaption => units.push(CandidateUnit {
                unit_id: format!("{aid}#i{i}"),
                article_id: aid.clone(),
                image_ref: Some(img.clone()),
                text: Some(caption(img)?),
            }),
            CandidateSide::Caption => units.push(CandidateUnit {
                unit_id: format!("{aid}#c{i}"),
                article_id: aid.clone(),
                image_ref: None,
                text: Some(caption(img)?),
            }),
        }
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{article, query};
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn parse_and_display() {
        let c: ModalityConfig = "IQ:IT".parse().unwrap();
        assert_eq!(c, ModalityConfig::default());
        assert_eq!(c.to_string(), "IQ:IT");
        // IQ is query-only and IT is candidate-only
        assert!("IT:IQ".parse::<ModalityConfig>().is_err());
        assert!("IQ".parse::<ModalityConfig>().is_err());
        assert_eq!("C:IC".parse::<ModalityConfig>().unwrap().to_string(), "C:IC");
    }

    #[test]
    fn query_plans() {
        let q = query("q1", &["a"]);
        let p = assemble_query(&q, QuerySide::ImageQuestion, None).unwrap();
        assert_eq!(p.image_ref.as_deref(), Some("q/q1.jpg"));
        assert_eq!(p.text.as_deref(), Some("What is q1?"));

        let p = assemble_query(&q, QuerySide::Image, None).unwrap();
        assert!(p.text.is_none() && p.image_ref.is_some());

        assert_eq!(
            assemble_query(&q, QuerySide::Caption, None),
            Err(ModalityError::MissingCaption("q/q1.jpg".into()))
        );
        let p = assemble_query(&q, QuerySide::Caption, Some("a red bird")).unwrap();
        assert_eq!((p.image_ref, p.text.as_deref()), (None, Some("a red bird")));
        let p = assemble_query(&q, QuerySide::ImageCaption, Some("cap")).unwrap();
        assert!(p.image_ref.is_some());
    }

    #[test]
    fn candidate_units() {
        let mut a = article("a1", "X");
        a.image_refs = vec!["x.jpg".into(), "y.jpg".into()];
        let units = assemble_candidates(&a, CandidateSide::ImageText, &BTreeMap::new()).unwrap();
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| u.article_id == "a1" && u.text.is_some()));

        let mut caps = BTreeMap::new();
        caps.insert("x.jpg".to_string(), "cap x".to_string());
        caps.insert("y.jpg".to_string(), "cap y".to_string());
        let units = assemble_candidates(&a, CandidateSide::ImageCaption, &caps).unwrap();
        assert_eq!(units[1].text.as_deref(), Some("cap y"));
        assert_eq!(units[1].image_ref.as_deref(), Some("y.jpg"));
        let units = assemble_candidates(&a, CandidateSide::Caption, &caps).unwrap();
        assert!(units.iter().all(|u| u.image_ref.is_none()));

        caps.remove("y.jpg");
        assert_eq!(
            assemble_candidates(&a, CandidateSide::ImageCaption, &caps),
            Err(ModalityError::MissingCaption("y.jpg".into()))
        );

        a.image_refs.clear();
        assert!(assemble_candidates(&a, CandidateSide::Image, &caps).unwrap().is_empty());
    }

    #[test]
    fn chunking_caps_at_four() {
        let mut a = article("a", "X");
        a.sections[0].text = (0..(CHUNK_TOKENS * 5 + 3)).map(|i| format!("w{i} ")).collect();
        let chunks = chunk_text(&a);
        assert_eq!(chunks.len(), MAX_CHUNKS);
        assert!(chunks.iter().all(|c| c.split_whitespace().count() == CHUNK_TOKENS));
        assert!(chunks[1].starts_with("w512 "));
    }
}
