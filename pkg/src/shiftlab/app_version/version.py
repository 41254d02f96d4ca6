# Update this manually when you change features/fixes (SemVer).
# major.minor.patch
APP_VERSION = "0.3.0"
