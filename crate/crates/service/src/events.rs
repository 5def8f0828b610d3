//! Events recorded in the log. State is rebuilt by applying them in order.

use aeba_core::challenge::SessionSpec;
use aeba_core::image_bank::{ImageRecord, ImageStatus};
use aeba_core::{ImageId, SessionId, UserId};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    UserRegistered {
        user_id: UserId,
        email: String,
        nickname: String,
        /// SHA-256 of the bearer token, hex encoded.
        token_hash: String,
        at: DateTime<Utc>,
    },
    ImageIngested {
        record: ImageRecord,
    },
    ImageStatusChanged {
        image_id: ImageId,
        status: ImageStatus,
    },
    RatingsServed {
        user_id: UserId,
        image_ids: Vec<ImageId>,
    },
    RatingRecorded {
        user_id: UserId,
        image_id: ImageId,
        value: u8,
        at: DateTime<Utc>,
    },
    RatingRevised {
        user_id: UserId,
        image_id: ImageId,
        value: u8,
        at: DateTime<Utc>,
    },
    SessionCreated {
        session: SessionSpec,
        /// Server calendar day the session was created on.
        local_date: NaiveDate,
    },
    ScreenScored {
        session_id: SessionId,
        screen_no: usize,
        chosen: Vec<ImageId>,
        score: u32,
        at: DateTime<Utc>,
    },
}

/// One committed command: all its events land together or not at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub seq: u64,
    pub events: Vec<Event>,
}
