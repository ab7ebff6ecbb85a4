//! Answering-agent prompt and reply parsing.

use thiserror::Error;

use crate::model::{confidence_from_score, AgentAnswer, Query};
use crate::perception::Evidence;
use crate::planner::PromptPair;

pub const ANSWER_SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/answer_system.txt");
pub const ANSWER_USER_TEMPLATE: &str = include_str!("../../assets/prompts/answer_user.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerParseError {
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("invalid confidence score: {0}")]
    InvalidScore(String),
}

/// Text placed after "Video Clip:" for a grounded segment.
pub fn clip_reference(evidence: &Evidence, video_id: &str) -> String {
    if evidence.description.trim().is_empty() {
        format!("clip {video_id} {}", evidence.episode.interval)
    } else {
        evidence.description.replace('\n', " ")
    }
}

pub fn build_answer_prompt(query: &Query, memory_digest: &str, latest_clip: &Evidence) -> PromptPair {
    let history = if memory_digest.is_empty() {
        String::new()
    } else {
        format!("- History Record:\n{memory_digest}\n")
    };
    PromptPair {
        system: ANSWER_SYSTEM_TEMPLATE.to_string(),
        user: ANSWER_USER_TEMPLATE
            .replace("{question}", &query.formatted())
            .replace("{clip}", &clip_reference(latest_clip, &query.video))
            .replace("{history}", &history),
    }
}

fn field<'a>(raw: &'a str, label: &str) -> Option<&'a str> {
    raw.lines().find_map(|line| {
        let t = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let (head, rest) = t.split_once(':')?;
        let head = head.trim().trim_matches('*').trim();
        head.eq_ignore_ascii_case(label).then(|| rest.trim().trim_matches('*').trim())
    })
}

/// Extracts the four labelled lines of an answering reply.
pub fn parse_agent_answer(raw: &str) -> Result<AgentAnswer, AnswerParseError> {
    let answer = field(raw, "Answer").ok_or(AnswerParseError::MissingField("answer"))?;
    let reason = field(raw, "Reason").ok_or(AnswerParseError::MissingField("reason"))?;
    let summary = field(raw, "Summary of this content").ok_or(AnswerParseError::MissingField("summary"))?;
    let score_text = field(raw, "Confidence Score").ok_or(AnswerParseError::MissingField("confidence"))?;
    let number: String = score_text
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-' || *c == '+')
        .collect();
    let value: f64 = number
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| AnswerParseError::InvalidScore(score_text.to_string()))?;
    let confidence = confidence_from_score(value.floor() as i64)
        .map_err(|_| AnswerParseError::InvalidScore(score_text.to_string()))?;
    Ok(AgentAnswer {
        answer: answer.to_string(),
        reason: reason.to_string(),
        summary: summary.to_string(),
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConfidenceBand, EpisodeOrigin, ReasoningEpisode, TemporalInterval};

    fn evidence(description: &str) -> Evidence {
        Evidence {
            episode: ReasoningEpisode {
                iteration: 1,
                intent: "i".into(),
                interval: TemporalInterval::new(10.0, 20.0),
                origin: EpisodeOrigin::Planned,
            },
            samples: vec![],
            first_pass_times: vec![],
            reselected: false,
            projected: vec![],
            aggregate: vec![],
            pooled: vec![],
            frame_cost: 0,
            description: description.into(),
        }
    }

    #[test]
    fn prompt_layout() {
        let q = Query::new("What color is the kite?", "v");
        let p = build_answer_prompt(&q, "", &evidence("a red kite"));
        assert!(p.system.contains("High Confidence (90-100):"));
        assert!(!p.user.contains("History Record"));
        assert!(p.user.starts_with("- Question: \"What color is the kite?\"\n- Video Clip: a red kite\n\nTask:"));
        assert!(p.user.ends_with(
            "Confidence Score: <A score from 1-100 based on the guide above>"
        ));
        let with = build_answer_prompt(&q, "[0–10] x (support 1)", &evidence("a red kite"));
        assert!(with.user.contains("- History Record:\n[0–10] x (support 1)\n\nTask:"));
        let bare = build_answer_prompt(&q, "", &evidence(""));
        assert!(bare.user.contains("- Video Clip: clip v [10, 20]"));
    }

    #[test]
    fn parse_well_formed() {
        let a = parse_agent_answer(
            "Answer: red\nReason: it is red\nSummary of this content: a kite\nConfidence Score: 95",
        )
        .unwrap();
        assert_eq!(a.answer, "red");
        assert_eq!(a.confidence.band, ConfidenceBand::High);
    }

    #[test]
    fn parse_tolerates_prose_and_fractions() {
        let a = parse_agent_answer(
            "Sure.\n\n  **Answer:** red \nReason:  x\nSummary of this content: y\nConfidence Score: 89.9/100\nThanks",
        )
        .unwrap();
        assert_eq!(a.answer, "red");
        assert_eq!(a.confidence.score, 89);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_agent_answer("Answer: a\nReason: b\nConfidence Score: 50"),
            Err(AnswerParseError::MissingField("summary"))
        );
        assert!(matches!(
            parse_agent_answer("Answer: a\nReason: b\nSummary of this content: c\nConfidence Score: 150"),
            Err(AnswerParseError::InvalidScore(_))
        ));
    }
}
