from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Detection
    window_s: float = 10.0
    tau: float = 4.0
    mode: str = "inline"
    default_ttl_s: int = 300
    anomaly_action: str = "block_attacker"

    # Signature promotion
    promoted_priority: int = 2
    promoted_sid_base: int = 1_000_000
    lcs_min_len: int = 8
    lcs_min_payloads: int = 3

    # Ingest service
    rules_path: str = ""
    profile_path: str = ""
    port: int = 8080

    # Administrator notification
    resend_api_key: str = ""
    alert_from_email: str = "IDPS <idps-alerts@updates.yourdomain.com>"

    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="IDPS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )


settings = Settings()
