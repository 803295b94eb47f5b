//! Tag authentication: UID allow-list, then originality-signature check.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::channel::{BatteryNode, ChannelError, NfcChannel};
use crate::clock::{Phase, SimClock};
use crate::ecc::{Signature, VerifyingKey};
use crate::frame::{Command, RequestFrame, Uid};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllowList(BTreeSet<Uid>);

impl AllowList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, uid: Uid) -> bool {
        self.0.insert(uid)
    }

    pub fn contains(&self, uid: &Uid) -> bool {
        self.0.contains(uid)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Uid> {
        self.0.iter()
    }
}

impl FromIterator<Uid> for AllowList {
    fn from_iter<I: IntoIterator<Item = Uid>>(iter: I) -> Self {
        AllowList(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthPolicy {
    Warn,
    #[default]
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthOutcome {
    Accepted,
    RejectedUid,
    RejectedSignature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTaken {
    None,
    WarningRaised,
    SystemShutdown,
}

impl AuthOutcome {
    pub fn label(self) -> &'static str {
        match self {
            AuthOutcome::Accepted => "accepted",
            AuthOutcome::RejectedUid => "rejected_uid",
            AuthOutcome::RejectedSignature => "rejected_signature",
        }
    }
}

/// Runs the authentication step against one discovered node.
///
/// The authentication latency is charged whatever the outcome. A UID that
/// is not allow-listed never causes a frame to be sent.
pub fn authenticate_tag(
    reader: &mut NfcChannel,
    node: &mut BatteryNode,
    allow_list: &AllowList,
    public_key: &VerifyingKey,
    policy: AuthPolicy,
    clock: &mut SimClock,
) -> Result<(AuthOutcome, ActionTaken), ChannelError> {
    let uid = node.uid();
    let outcome = if !allow_list.contains(&uid) {
        AuthOutcome::RejectedUid
    } else {
        let req = RequestFrame::new(Command::ReadSignature, Some(uid), 0, 0);
        let resp = match reader.transceive(&req, node, clock) {
            Ok(resp) => resp,
            Err(e) => {
                clock.charge_with(Phase::Authentication, "timeout");
                return Err(e);
            }
        };
        match Signature::from_bytes(&resp.payload) {
            Some(sig) if public_key.verify(&uid.0, &sig) => AuthOutcome::Accepted,
            _ => AuthOutcome::RejectedSignature,
        }
    };
    clock.charge_with(Phase::Authentication, outcome.label());
    let action = match (outcome, policy) {
        (AuthOutcome::Accepted, _) => ActionTaken::None,
        (_, AuthPolicy::Warn) => ActionTaken::WarningRaised,
        (_, AuthPolicy::Shutdown) => ActionTaken::SystemShutdown,
    };
    Ok((outcome, action))
}
