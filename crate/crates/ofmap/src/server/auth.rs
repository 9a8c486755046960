//! Per-service access control.
//!
//! Each service a server advertises carries its own policy, so a provider
//! can keep tiles public while restricting localization to people who are
//! actually inside the building, or gate a service on the requesting
//! application rather than the user.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    /// Anyone, no credentials required.
    Open,
    /// The user token must be on the allow list.
    User,
    /// Per-service user list; same check as `User`, scoped to one service.
    Service,
    /// The application token must be on the allow list. App tokens are
    /// opaque; how the app authenticates its own users is its business.
    Application,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthPolicy {
    pub mode: AuthMode,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub allowed_users: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub allowed_apps: BTreeSet<String>,
}

impl AuthPolicy {
    pub fn open() -> Self {
        Self {
            mode: AuthMode::Open,
            allowed_users: BTreeSet::new(),
            allowed_apps: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mode == AuthMode::User && self.allowed_users.is_empty() {
            return Err("user mode requires a non-empty allowed_users list".into());
        }
        if self.mode == AuthMode::Application && self.allowed_apps.is_empty() {
            return Err("application mode requires a non-empty allowed_apps list".into());
        }
        Ok(())
    }
}

/// Tokens presented with a request, via the `X-OF-User` and `X-OF-App`
/// headers on the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_token: Option<String>,
}

impl Credentials {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn user(token: &str) -> Self {
        Self {
            user_token: Some(token.to_string()),
            app_token: None,
        }
    }

    pub fn app(token: &str) -> Self {
        Self {
            user_token: None,
            app_token: Some(token.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthDecision {
    Allow,
    /// `check` names which control failed: "user", "service", or
    /// "application".
    Deny { check: &'static str },
}

impl AuthDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, AuthDecision::Allow)
    }
}

pub fn authorize(policy: &AuthPolicy, credentials: &Credentials) -> AuthDecision {
    let user_allowed = || {
        credentials
            .user_token
            .as_ref()
            .is_some_and(|t| policy.allowed_users.contains(t))
    };
    match policy.mode {
        AuthMode::Open => AuthDecision::Allow,
        AuthMode::User => {
            if user_allowed() {
                AuthDecision::Allow
            } else {
                AuthDecision::Deny { check: "user" }
            }
        }
        AuthMode::Service => {
            if user_allowed() {
                AuthDecision::Allow
            } else {
                AuthDecision::Deny { check: "service" }
            }
        }
        AuthMode::Application => {
            let ok = credentials
                .app_token
                .as_ref()
                .is_some_and(|t| policy.allowed_apps.contains(t));
            if ok {
                AuthDecision::Allow
            } else {
                AuthDecision::Deny {
                    check: "application",
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(mode: AuthMode) -> AuthPolicy {
        AuthPolicy {
            mode,
            allowed_users: BTreeSet::from(["u1".to_string()]),
            allowed_apps: BTreeSet::from(["app1".to_string()]),
        }
    }

    #[test]
    fn open_allows_anonymous() {
        assert!(authorize(&policy(AuthMode::Open), &Credentials::none()).is_allow());
    }

    #[test]
    fn user_mode_checks_the_list() {
        let p = policy(AuthMode::User);
        assert!(authorize(&p, &Credentials::user("u1")).is_allow());
        assert_eq!(
            authorize(&p, &Credentials::user("u2")),
            AuthDecision::Deny { check: "user" }
        );
        assert_eq!(
            authorize(&p, &Credentials::none()),
            AuthDecision::Deny { check: "user" }
        );
        // An app token is no substitute for a user token.
        assert!(!authorize(&p, &Credentials::app("app1")).is_allow());
    }

    #[test]
    fn service_mode_uses_its_own_user_list() {
        let p = policy(AuthMode::Service);
        assert!(authorize(&p, &Credentials::user("u1")).is_allow());
        assert_eq!(
            authorize(&p, &Credentials::user("u2")),
            AuthDecision::Deny { check: "service" }
        );
    }

    #[test]
    fn application_mode_checks_the_app_token() {
        let p = policy(AuthMode::Application);
        assert!(authorize(&p, &Credentials::app("app1")).is_allow());
        assert_eq!(
            authorize(&p, &Credentials::app("rogue")),
            AuthDecision::Deny {
                check: "application"
            }
        );
        assert!(!authorize(&p, &Credentials::user("u1")).is_allow());
    }

    #[test]
    fn invariants_enforced() {
        let mut p = policy(AuthMode::User);
        p.allowed_users.clear();
        assert!(p.validate().is_err());
        let mut p = policy(AuthMode::Application);
        p.allowed_apps.clear();
        assert!(p.validate().is_err());
        assert!(AuthPolicy::open().validate().is_ok());
    }
}
